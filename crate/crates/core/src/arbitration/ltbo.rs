//! Operator-biased linear trajectory blending: the autonomy is first
//! conditioned on an operator statistic, then blended with `h̄` anyway.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{
    autonomy_mode, autonomy_only, contract, gains, operator_mode, put, put_mode_weights, report, ArbitrationError,
    ArbitrationInput, ArbitrationReport, Arbitrator, Diagnostics, Method,
};
use crate::interaction::AgreeabilityConditioner;
use crate::trajectory::{AgentId, ObservationLog, OperatorStatistic, StatisticValue, Trajectory};

/// Which statistic LTBo derives from `h̄` when none is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticChoice {
    GoalPoint,
    #[default]
    FullTrajectory,
}

/// Statistic computed from `h̄`, citing every logged operator observation.
pub fn default_statistic(
    h_bar: &DVector<f64>,
    times: &[f64],
    choice: StatisticChoice,
    std: f64,
    log: Option<&ObservationLog>,
) -> Result<OperatorStatistic, ArbitrationError> {
    let trajectory = Trajectory::from_stacked(times, h_bar)?;
    let value = match choice {
        StatisticChoice::GoalPoint => StatisticValue::GoalPoint {
            point: trajectory.last(),
        },
        StatisticChoice::FullTrajectory => StatisticValue::FullTrajectory { trajectory },
    };
    Ok(OperatorStatistic {
        value,
        std,
        source: (0..log.map_or(0, |l| l.count(AgentId::Operator))).collect(),
    })
}

/// Rows of the stacked vector the statistic speaks about, and a full-length
/// target vector holding its values at those rows.
fn statistic_rows(stat: &OperatorStatistic, times: &[f64]) -> Result<(Vec<usize>, DVector<f64>), ArbitrationError> {
    let d = 2 * times.len();
    let mut target = DVector::zeros(d);
    let rows = match &stat.value {
        StatisticValue::GoalPoint { point } => {
            target[d - 2] = point.x;
            target[d - 1] = point.y;
            vec![d - 2, d - 1]
        }
        StatisticValue::Waypoint { time, point } => {
            let k = times
                .iter()
                .position(|t| (t - time).abs() <= 1e-9 * (1.0 + time.abs()))
                .ok_or_else(|| contract(format!("statistic time {time} is not on the grid")))?;
            target[2 * k] = point.x;
            target[2 * k + 1] = point.y;
            vec![2 * k, 2 * k + 1]
        }
        StatisticValue::FullTrajectory { trajectory } => {
            if trajectory.times().len() != times.len()
                || trajectory
                    .times()
                    .iter()
                    .zip(times)
                    .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs()))
            {
                return Err(contract("statistic trajectory is not on the model grid"));
            }
            target = trajectory.stacked();
            (0..d).collect()
        }
    };
    Ok((rows, target))
}

/// LTBo with an explicit statistic.
pub fn ltbo_with_statistic(
    input: &ArbitrationInput<'_>,
    statistic: &OperatorStatistic,
) -> Result<ArbitrationReport, ArbitrationError> {
    input.validate()?;
    let available = input.operator_log.map_or(0, |l| l.count(AgentId::Operator));
    if let Some(index) = statistic.source.iter().copied().find(|i| *i >= available) {
        return Err(ArbitrationError::Provenance { index, available });
    }
    if !(statistic.std > 0.0) {
        return Err(contract("statistic std must be positive"));
    }
    let Some((h, op_mode)) = operator_mode(input.models)? else {
        return autonomy_only(Method::Ltbo, input);
    };
    let mut d = Diagnostics::new();
    let (rows, target) = statistic_rows(statistic, &input.models.times)?;
    let conditioner = AgreeabilityConditioner::on_rows(&input.models.robot, rows, statistic.std * statistic.std)?;
    let product = conditioner.condition(&target)?;
    let (f_h, mode) = autonomy_mode(input, &product.mixture)?;
    let g = gains(input, &input.models.robot, mode, &mut d)?;
    let blended = &h * g.k_h() + &f_h * g.k_r();
    put(&mut d, "operator_mode", op_mode as f64);
    put(&mut d, "robot_mode", mode as f64);
    put(&mut d, "n_r", input.models.robot.len() as f64);
    put(&mut d, "operator_data_reuse", 1.0);
    put(&mut d, "statistic_std", statistic.std);
    put(&mut d, "log_evidence", product.log_evidence);
    put_mode_weights(&mut d, product.mixture.log_weights(), Some(&product.log_normalizers));
    report(Method::Ltbo, input, &blended, d)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Ltbo;

impl Arbitrator for Ltbo {
    fn method(&self) -> Method {
        Method::Ltbo
    }

    fn arbitrate(&self, input: &ArbitrationInput<'_>) -> Result<ArbitrationReport, ArbitrationError> {
        if let Some(stat) = input.statistic {
            return ltbo_with_statistic(input, stat);
        }
        input.validate()?;
        let Some((h, _)) = operator_mode(input.models)? else {
            return autonomy_only(Method::Ltbo, input);
        };
        let std = input.config.ltbo_std.unwrap_or_else(|| input.params.gamma.sqrt());
        let stat = default_statistic(
            &h,
            &input.models.times,
            input.config.ltbo_statistic,
            std,
            input.operator_log,
        )?;
        ltbo_with_statistic(input, &stat)
    }
}
