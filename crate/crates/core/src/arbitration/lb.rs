//! Linear blending of operator and autonomy velocity commands.

use super::{
    autonomy_mode, autonomy_only, gains, linear_blend, operator_mode, put, report, ArbitrationError, ArbitrationInput,
    ArbitrationReport, Arbitrator, Diagnostics, Method,
};
use crate::trajectory::Trajectory;

/// `u = K_h u_h + K_R u_R`, with the operator input interpreted literally
/// as a constant velocity over the horizon.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lb;

impl Arbitrator for Lb {
    fn method(&self) -> Method {
        Method::Lb
    }

    fn arbitrate(&self, input: &ArbitrationInput<'_>) -> Result<ArbitrationReport, ArbitrationError> {
        input.validate()?;
        if input.models.operator.is_none() && input.operator_input.is_none() {
            return autonomy_only(Method::Lb, input);
        }
        let mut d = Diagnostics::new();
        let dt = input.dt();
        let (f, mode) = autonomy_mode(input, &input.models.robot)?;
        let g = gains(input, &input.models.robot, mode, &mut d)?;
        let u_h = match input.operator_input {
            Some(u) => u,
            None => {
                let (h, _) = operator_mode(input.models)?.expect("operator model present");
                (crate::trajectory::Point2::new(h[0], h[1]) - input.origin) / dt
            }
        };
        let f_traj = Trajectory::from_stacked(&input.models.times, &f)?;
        let u_r = (f_traj.first() - input.origin) / dt;
        let command = linear_blend(u_h, u_r, g);
        let literal = Trajectory::constant_velocity(input.t0, input.origin, u_h, &input.models.times)?;
        let blended = literal.blend(&f_traj, g.k_h())?;
        put(&mut d, "robot_mode", mode as f64);
        put(&mut d, "command_x", command.x);
        put(&mut d, "command_y", command.y);
        report(Method::Lb, input, &blended.stacked(), d)
    }
}
