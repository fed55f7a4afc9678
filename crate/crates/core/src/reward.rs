//! Per-step reward with a named breakdown.
//!
//! Eighteen terms in four groups (task, dense, posture, smoothness/contact).
//! The objective mode decides which task terms are live: velocity tracking
//! uses the two tracking terms, goal reaching uses the bound and dense terms.

use serde::{Deserialize, Serialize};

use crate::hopper::{Body, StepInfo, TerminationReason};

pub const NUM_TERMS: usize = 18;

/// Term names in evaluation (and summation) order.
pub const TERM_NAMES: [&str; NUM_TERMS] = [
    "track_lin_vel",
    "track_ang_vel",
    "termination",
    "out_bound",
    "out_platform",
    "reach_far",
    "lin_vel_z",
    "ang_vel_xy",
    "orientation",
    "joint_torques",
    "action_rate",
    "action_smoothness",
    "joint_power",
    "joint_acc",
    "joint_deviation",
    "collision",
    "stumble",
    "feet_edge",
];

const TRACKING_SIGMA: f64 = 0.25;
const COLLISION_FORCE: f64 = 0.1;
const STUMBLE_RATIO: f64 = 4.0;
const EDGE_SCALE: f64 = 0.05;
const PLATFORM_HALF_WIDTH: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveMode {
    #[default]
    VelocityTracking,
    GoalReaching,
}

/// Origin used for the `reach_far` displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReachFrame {
    #[default]
    FromGoal,
    FromSpawn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub track_lin_vel: f64,
    pub track_ang_vel: f64,
    pub termination: f64,
    pub out_bound: f64,
    pub out_platform: f64,
    pub reach_far: f64,
    pub lin_vel_z: f64,
    pub ang_vel_xy: f64,
    pub orientation: f64,
    pub joint_torques: f64,
    pub action_rate: f64,
    pub action_smoothness: f64,
    pub joint_power: f64,
    pub joint_acc: f64,
    pub joint_deviation: f64,
    pub collision: f64,
    pub stumble: f64,
    pub feet_edge: f64,
    pub reach_frame: ReachFrame,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            track_lin_vel: 1.5,
            track_ang_vel: 0.5,
            termination: -200.0,
            out_bound: 200.0,
            out_platform: 10.0,
            reach_far: -0.5,
            lin_vel_z: -0.5,
            ang_vel_xy: -0.05,
            orientation: -1.0,
            joint_torques: -1.0e-5,
            action_rate: -0.01,
            action_smoothness: -0.01,
            joint_power: -2.0e-5,
            joint_acc: -2.5e-7,
            joint_deviation: -0.01,
            collision: -10.0,
            stumble: -1.0,
            feet_edge: -1.0,
            reach_frame: ReachFrame::FromGoal,
        }
    }
}

impl RewardWeights {
    /// Defaults with the dense shaping terms switched off.
    pub fn sparse() -> Self {
        Self { out_platform: 0.0, reach_far: 0.0, ..Self::default() }
    }

    pub fn as_array(&self) -> [f64; NUM_TERMS] {
        [
            self.track_lin_vel,
            self.track_ang_vel,
            self.termination,
            self.out_bound,
            self.out_platform,
            self.reach_far,
            self.lin_vel_z,
            self.ang_vel_xy,
            self.orientation,
            self.joint_torques,
            self.action_rate,
            self.action_smoothness,
            self.joint_power,
            self.joint_acc,
            self.joint_deviation,
            self.collision,
            self.stumble,
            self.feet_edge,
        ]
    }

    pub fn validate(&self) -> crate::Result<()> {
        for (name, w) in TERM_NAMES.iter().zip(self.as_array()) {
            if !w.is_finite() {
                return Err(crate::Error::key(format!("reward.{name}"), "weight must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermValue {
    pub raw: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    pub total: f64,
    pub terms: [TermValue; NUM_TERMS],
}

impl RewardBreakdown {
    pub fn get(&self, name: &str) -> Option<TermValue> {
        TERM_NAMES.iter().position(|n| *n == name).map(|i| self.terms[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, TermValue)> + '_ {
        TERM_NAMES.iter().copied().zip(self.terms.iter().copied())
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Raw (unweighted) value of every term, in [`TERM_NAMES`] order.
pub fn raw_terms(info: &StepInfo, frame: ReachFrame) -> [f64; NUM_TERMS] {
    let vx = info.v[0];
    let track_lin = (-sq(vx.min(info.v_cmd) - info.v_cmd) / TRACKING_SIGMA).exp();
    let track_ang = (-sq(info.yaw_rate - info.yaw_rate_cmd) / TRACKING_SIGMA).exp();
    let termination = indicator(matches!(info.termination_reason, Some(TerminationReason::NonFootContact(_))));
    let out_bound = indicator(info.termination_reason == Some(TerminationReason::OutOfBounds));
    let out_platform = indicator((info.torso_x - info.spawn_x).abs() > PLATFORM_HALF_WIDTH);
    let origin = match frame {
        ReachFrame::FromGoal => info.goal_x,
        ReachFrame::FromSpawn => info.spawn_x,
    };
    let reach_far = (-(info.torso_x - origin).abs()).exp();
    let orientation = sq(info.gravity[0] - info.g_target[0]) + sq(info.gravity[1] - info.g_target[1]);

    let mut torques = 0.0;
    let mut rate = 0.0;
    let mut smooth = 0.0;
    let mut power = 0.0;
    let mut acc = 0.0;
    let mut dev = 0.0;
    for j in 0..2 {
        torques += sq(info.torques[j]);
        rate += sq(info.action[j] - info.prev_action[j]);
        smooth += sq(info.action[j] - 2.0 * info.prev_action[j] + info.prev_prev_action[j]);
        power += (info.torques[j] * info.joint_vel[j]).abs();
        acc += sq(info.joint_acc[j]);
        dev += sq(info.joint_pos[j] - info.q_default[j]);
    }

    let collision: f64 = [Body::Shank, Body::Thigh, Body::Torso]
        .iter()
        .map(|b| {
            let f = info.contact_forces[b.index()];
            indicator(f[0].hypot(f[1]) > COLLISION_FORCE)
        })
        .sum();
    let stumble = indicator(info.contact_forces.iter().any(|f| f[0].abs() > STUMBLE_RATIO * f[1].abs()));
    let feet_edge = indicator(info.foot_contact) * (-info.edge_distance / EDGE_SCALE).exp();

    [
        track_lin,
        track_ang,
        termination,
        out_bound,
        out_platform,
        reach_far,
        sq(info.v[1]),
        sq(info.pitch_rate),
        orientation,
        torques,
        rate,
        smooth,
        power,
        acc,
        dev,
        collision,
        stumble,
        feet_edge,
    ]
}

/// Weights after the objective mode has switched terms on or off.
pub fn effective_weights(weights: &RewardWeights, mode: ObjectiveMode) -> [f64; NUM_TERMS] {
    let mut w = weights.as_array();
    match mode {
        ObjectiveMode::VelocityTracking => {
            w[3] = 0.0;
            w[4] = 0.0;
            w[5] = 0.0;
        }
        ObjectiveMode::GoalReaching => {
            w[0] = 0.0;
            w[1] = 0.0;
        }
    }
    w
}

pub fn compute_reward(info: &StepInfo, weights: &RewardWeights, mode: ObjectiveMode) -> RewardBreakdown {
    let raw = raw_terms(info, weights.reach_frame);
    let w = effective_weights(weights, mode);
    let mut terms = [TermValue { raw: 0.0, weighted: 0.0 }; NUM_TERMS];
    let mut total = 0.0;
    for i in 0..NUM_TERMS {
        let weighted = raw[i] * w[i];
        terms[i] = TermValue { raw: raw[i], weighted };
        total += weighted;
    }
    RewardBreakdown { total, terms }
}
