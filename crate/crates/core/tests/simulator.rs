use blendlab::arbitration::{
    ArbitrationError, ArbitrationInput, ArbitrationReport, Arbitrator, ArbitratorRegistry, Diagnostics, Method,
    SharedControl,
};
use blendlab::checks::basin_violations;
use blendlab::interaction::{joint_log_density, JointPoint, OperatorModel};
use blendlab::simulator::{
    compute_metrics, run_episode, scenario_crossing, scenario_fig2, scenario_fig3, scenario_fig4, scenario_open,
    Episode, EpisodeConfig, EpisodeLog, Scenario, SCENARIO_NAMES,
};
use blendlab::trajectory::{Point2, Trajectory};

/// Drives the robot at a fixed velocity, whatever the models say.
struct Constant(Point2);

impl Arbitrator for Constant {
    fn method(&self) -> Method {
        Method::Psc
    }

    fn arbitrate(&self, input: &ArbitrationInput<'_>) -> Result<ArbitrationReport, ArbitrationError> {
        let t = Trajectory::constant_velocity(input.t0, input.origin, self.0, &input.models.times)?;
        Ok(ArbitrationReport {
            method: Method::Psc,
            control: SharedControl::from_trajectory(t, input.origin, input.t0, input.config.v_max)?,
            diagnostics: Diagnostics::new(),
        })
    }
}

fn registry_with(velocity: Point2) -> ArbitratorRegistry {
    let mut r = ArbitratorRegistry::standard();
    r.register(Box::new(Constant(velocity)));
    r
}

fn run(s: &Scenario, method: Method, k_h: Option<f64>, seed: u64) -> (EpisodeLog, blendlab::simulator::Metrics) {
    let mut cfg = EpisodeConfig::new(method);
    cfg.arbitration.k_h = k_h;
    cfg.seed = seed;
    run_episode(s, cfg, &ArbitratorRegistry::standard()).unwrap()
}

#[test]
fn zero_control_keeps_the_robot_still_while_time_advances() {
    let s = scenario_crossing();
    let reg = registry_with(Point2::zeros());
    let mut ep = Episode::new(&s, EpisodeConfig::new(Method::Psc)).unwrap();
    for k in 1..=6 {
        let rec = ep.step(&reg, None).unwrap();
        assert_eq!(rec.world.robot, s.robot_start);
        assert_eq!(rec.world.step, k);
        assert_eq!(rec.world.time, k as f64 * s.dt);
    }
    // pedestrians kept walking
    assert_ne!(
        ep.world().crowd,
        Episode::new(&s, EpisodeConfig::new(Method::Psc)).unwrap().world().crowd
    );
}

#[test]
fn straight_control_advances_exactly_by_velocity_times_dt() {
    let s = scenario_open();
    let v = Point2::new(0.8, 0.3);
    let reg = registry_with(v);
    let mut ep = Episode::new(&s, EpisodeConfig::new(Method::Psc)).unwrap();
    for k in 1..=10 {
        let rec = ep.step(&reg, None).unwrap();
        let expected = s.robot_start + v * (k as f64 * s.dt);
        assert!((rec.world.robot - expected).amax() < 1e-12, "step {k}");
        assert!((rec.command - v).amax() < 1e-12);
    }
}

#[test]
fn fixed_seed_gives_bit_identical_rollouts() {
    let s = scenario_crossing();
    let (a, ma) = run(&s, Method::Psc, None, 7);
    let (b, mb) = run(&s, Method::Psc, None, 7);
    assert_eq!(a, b);
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(ma, mb);
    let (c, _) = run(&s, Method::Psc, None, 8);
    assert_ne!(a.robot_path(), c.robot_path());
}

#[test]
fn obstacle_free_scenario_reaches_the_goal_with_every_method() {
    let s = scenario_open();
    for m in Method::ALL {
        let (log, metrics) = run(&s, m, None, 0);
        assert!(metrics.time_to_goal.is_some(), "{m}: {metrics:?}");
        assert!(!metrics.collision, "{m}");
        assert_eq!(metrics.infeasible_steps, 0, "{m}");
        let straight = (s.robot_goal - s.robot_start).norm();
        assert!(metrics.path_length >= straight - s.settings.goal_tolerance, "{m}");
        assert!(log.steps.iter().all(|r| r.report.as_ref().unwrap().method == m));
    }
}

#[test]
fn log_round_trips_and_metrics_recompute_exactly() {
    for (s, m) in [
        (scenario_crossing(), Method::Ctb),
        (scenario_fig2(), Method::Ltbo),
        (scenario_open(), Method::Lb),
    ] {
        let (log, metrics) = run(&s, m, None, 3);
        let text = log.to_jsonl();
        assert_eq!(text.lines().count(), log.steps.len() + 1);
        let parsed = EpisodeLog::from_jsonl(&text).unwrap();
        assert_eq!(parsed, log);
        assert_eq!(compute_metrics(&parsed), metrics);
    }
}

#[test]
fn malformed_logs_are_rejected() {
    let (log, _) = run(&scenario_open(), Method::Lb, None, 0);
    let text = log.to_jsonl();
    let mut lines: Vec<&str> = text.lines().collect();
    assert!(EpisodeLog::from_jsonl("").is_err());
    assert!(EpisodeLog::from_jsonl(lines[1]).is_err());
    let header = lines[0];
    lines.push(header);
    assert!(EpisodeLog::from_jsonl(&lines.join("\n")).is_err());
    assert!(EpisodeLog::from_jsonl(&format!("{header}\n{{\"kind\":\"step\"}}")).is_err());
}

#[test]
fn relabeling_the_crowd_leaves_metrics_unchanged() {
    let s = scenario_crossing();
    let mut reversed = s.clone();
    reversed.crowd.reverse();
    assert_ne!(reversed.crowd, s.crowd);
    for m in [Method::Psc, Method::Ltb] {
        let (_, a) = run(&s, m, None, 2);
        let (_, b) = run(&reversed, m, None, 2);
        assert_eq!(a, b, "{m}");
    }
}

#[test]
fn operator_passthrough_collides_in_the_unsafe_scenario() {
    let (_, m) = run(&scenario_fig3(), Method::Lb, Some(1.0), 0);
    assert!(m.collision, "{m:?}");
}

#[test]
fn psc_commits_to_one_operator_mode_in_the_bimodal_scenario() {
    let (log, m) = run(&scenario_fig4(), Method::Psc, None, 0);
    assert!(!m.collision, "{m:?}");
    let (commit, bad) = basin_violations(&log).expect("robot committed to a mode");
    assert!(bad.is_empty(), "left the basin after step {commit} at {bad:?}");
}

/// At every step of a PSC episode, the PSC objective is at least the joint
/// density of what any other method would have executed from the same
/// state, scored at the operator mode with pedestrians at their means.
#[test]
fn psc_dominates_every_method_step_by_step() {
    let s = scenario_fig2();
    let reg = ArbitratorRegistry::standard();
    let mut ep = Episode::new(&s, EpisodeConfig::new(Method::Psc)).unwrap();
    let mut checked = 0;
    for _ in 0..24 {
        let sensed = ep.sense(None).unwrap();
        let Some(OperatorModel::Predictive(op)) = &sensed.models.operator else {
            ep.act(&reg, sensed).unwrap();
            continue;
        };
        let means: Vec<_> = op.components().iter().map(|c| c.mean().clone()).collect();
        let h_bar = blendlab::gaussian::mixture_argmax(op, &means).unwrap();
        let input = ep.arbitration_input(&sensed);
        let psc = reg.resolve("psc").unwrap().arbitrate(&input).unwrap();
        let best = psc.diagnostics["joint_log_density"];
        assert!(best >= psc.diagnostics["ltb_joint_log_density"]);
        for name in ["lb", "ltb", "ltbo", "ctb"] {
            let other = reg.resolve(name).unwrap().arbitrate(&input).unwrap();
            let point = JointPoint {
                h: Some(h_bar.clone()),
                robot: other.control.trajectory.stacked(),
                crowd: sensed.models.crowd.iter().map(|c| c.mean().clone()).collect(),
            };
            let value = joint_log_density(&point, &sensed.models, &ep.config().params)
                .unwrap()
                .total;
            assert!(
                best >= value - 1e-9,
                "step {}: psc {best} < {name} {value}",
                ep.world().step
            );
        }
        checked += 1;
        ep.act(&reg, sensed).unwrap();
    }
    assert!(checked >= 20);
}

#[test]
fn every_builtin_loads_by_name() {
    for name in SCENARIO_NAMES {
        let s = Scenario::load(name).unwrap();
        assert_eq!(s.name, *name);
        s.validate().unwrap();
    }
    assert!(Scenario::load("nowhere").is_err());
}
