//! Planar monoped hopper.
//!
//! The robot is a torso with a two-link leg (thigh, shank) hinged at the torso
//! center. Generalized coordinates are `[x, z, pitch, hip, knee]`, where
//! `(x, z)` is the torso center of mass. Link angles are measured
//! counter-clockwise from straight down, so a link at absolute angle `a`
//! points along `(sin a, -cos a)`.
//!
//! Dynamics are reduced-coordinate: the mass matrix and velocity-product
//! terms are assembled from per-body Jacobians each substep and integrated
//! with semi-implicit Euler. Spring-damper forces (PD joints, contacts, the
//! assist spring) are linearized implicitly so the stiff foot contact stays
//! stable at the 5 ms substep. Ground contact is a penalty spring-damper on a
//! handful of probe points; only the foot probe may touch the ground.

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::terrain::{sample_heightmap, Heightfield};

type Mat5 = SMatrix<f64, 5, 5>;
type Vec5 = SVector<f64, 5>;

pub const ACT_DIM: usize = 2;
pub const PROPRIO_DIM: usize = 11;
pub const HEIGHTMAP_POINTS: usize = 16;
const RATE_SCALE: f64 = 0.25;
const HEIGHTMAP_CLIP: f64 = 1.0;
const RESET_JOINT_NOISE: f64 = 0.05;

/// Contacting bodies, foot first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Body {
    Foot,
    Shank,
    Thigh,
    Torso,
}

impl Body {
    pub const ALL: [Body; 4] = [Body::Foot, Body::Shank, Body::Thigh, Body::Torso];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Training-wheel springs that pin torso pitch and horizontal position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssistSpring {
    pub pitch_stiffness: f64,
    pub pitch_damping: f64,
    pub x_stiffness: f64,
    pub x_damping: f64,
}

impl Default for AssistSpring {
    fn default() -> Self {
        AssistSpring { pitch_stiffness: 200.0, pitch_damping: 5.0, x_stiffness: 500.0, x_damping: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopperModel {
    pub torso_mass: f64,
    /// Thigh, shank.
    pub link_masses: [f64; 2],
    pub link_lengths: [f64; 2],
    pub torso_length: f64,
    pub torso_inertia: f64,
    pub gravity: f64,
    pub sim_dt: f64,
    pub control_decimation: u32,
    pub pd_kp: f64,
    pub pd_kd: f64,
    pub torque_limit: f64,
    /// `(lower, upper)` for hip and knee.
    pub joint_limits: [[f64; 2]; 2],
    pub q_default: [f64; 2],
    pub g_target: [f64; 2],
    pub friction_coeff: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub foot_radius: f64,
    /// Sole extent behind and ahead of the ankle point. The sole is rigid
    /// with the shank and level when the leg is at `q_default` and the torso
    /// is upright.
    pub sole_heel: f64,
    pub sole_toe: f64,
    pub body_radius: f64,
    /// Joint-target offset per unit of policy output.
    pub action_scale: f64,
    /// Control steps before a timeout.
    pub episode_horizon: u32,
    /// Applied whenever an assisted step is requested.
    pub assist: AssistSpring,
}

impl Default for HopperModel {
    fn default() -> Self {
        let (mt, ml) = (0.5, 0.22);
        let (ms, ls) = (0.3, 0.22);
        HopperModel {
            torso_mass: 3.0,
            link_masses: [mt, ms],
            link_lengths: [ml, ls],
            torso_length: 0.3,
            torso_inertia: 3.0 * 0.3 * 0.3 / 12.0,
            gravity: 9.81,
            sim_dt: 0.005,
            control_decimation: 4,
            pd_kp: 30.0,
            pd_kd: 1.0,
            torque_limit: 23.5,
            joint_limits: [[-0.6, 1.8], [-2.5, -0.1]],
            q_default: [0.6, -1.2],
            g_target: [0.0, -1.0],
            friction_coeff: 0.8,
            contact_stiffness: 5000.0,
            contact_damping: 100.0,
            foot_radius: 0.02,
            sole_heel: 0.05,
            sole_toe: 0.05,
            body_radius: 0.02,
            action_scale: 0.5,
            episode_horizon: 1000,
            assist: AssistSpring::default(),
        }
    }
}

impl HopperModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("torso_mass", self.torso_mass),
            ("link_masses", self.link_masses[0].min(self.link_masses[1])),
            ("link_lengths", self.link_lengths[0].min(self.link_lengths[1])),
            ("torso_length", self.torso_length),
            ("torso_inertia", self.torso_inertia),
            ("sim_dt", self.sim_dt),
            ("pd_kp", self.pd_kp),
            ("pd_kd", self.pd_kd),
            ("torque_limit", self.torque_limit),
            ("contact_stiffness", self.contact_stiffness),
            ("contact_damping", self.contact_damping),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::key(format!("model.{key}"), "must be positive and finite"));
            }
        }
        if self.control_decimation == 0 {
            return Err(Error::key("model.control_decimation", "must be at least 1"));
        }
        if self.episode_horizon == 0 {
            return Err(Error::key("model.episode_horizon", "must be at least 1"));
        }
        for j in 0..2 {
            let [lo, hi] = self.joint_limits[j];
            if !(lo < hi) || !(lo..=hi).contains(&self.q_default[j]) {
                return Err(Error::key("model.q_default", "must lie within joint_limits"));
            }
        }
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        self.sim_dt * f64::from(self.control_decimation)
    }

    /// Torso height above flat ground with the leg at `q_default`, foot just touching.
    pub fn standing_height(&self) -> f64 {
        let a1 = self.q_default[0];
        let a2 = a1 + self.q_default[1];
        self.link_lengths[0] * a1.cos() + self.link_lengths[1] * a2.cos() + self.foot_radius
    }

    /// Joint targets for a policy output.
    pub fn action_to_target(&self, raw: &[f64]) -> [f64; 2] {
        [
            self.q_default[0] + self.action_scale * raw[0],
            self.q_default[1] + self.action_scale * raw[1],
        ]
    }

    pub fn total_mass(&self) -> f64 {
        self.torso_mass + self.link_masses[0] + self.link_masses[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    NonFootContact(Body),
    OutOfBounds,
    Timeout,
}

impl TerminationReason {
    pub fn name(self) -> &'static str {
        match self {
            TerminationReason::NonFootContact(_) => "non-foot-contact",
            TerminationReason::OutOfBounds => "out-of-bounds",
            TerminationReason::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopperState {
    pub x: f64,
    pub z: f64,
    pub pitch: f64,
    pub vx: f64,
    pub vz: f64,
    pub pitch_rate: f64,
    pub joint_pos: [f64; 2],
    pub joint_vel: [f64; 2],
    /// Finite difference of joint velocity over the last control step.
    pub joint_acc: [f64; 2],
    pub torques: [f64; 2],
    pub prev_action: [f64; 2],
    pub prev_prev_action: [f64; 2],
    /// `(F_x, F_z)` per [`Body`], from the most recent substep.
    pub contact_forces: [[f64; 2]; 4],
    /// Stick points of the heel and toe friction springs while in contact.
    pub foot_anchor: [Option<f64>; 2],
    /// Horizontal anchor of the assist spring.
    pub assist_anchor_x: f64,
    /// `[v_x command, yaw-rate command]`.
    pub command: [f64; 2],
    pub step: u32,
    pub terminated: Option<TerminationReason>,
}

impl HopperState {
    fn q(&self) -> Vec5 {
        Vec5::new(self.x, self.z, self.pitch, self.joint_pos[0], self.joint_pos[1])
    }

    fn qd(&self) -> Vec5 {
        Vec5::new(self.vx, self.vz, self.pitch_rate, self.joint_vel[0], self.joint_vel[1])
    }

    fn set_q(&mut self, q: &Vec5, qd: &Vec5) {
        (self.x, self.z, self.pitch) = (q[0], q[1], q[2]);
        self.joint_pos = [q[3], q[4]];
        (self.vx, self.vz, self.pitch_rate) = (qd[0], qd[1], qd[2]);
        self.joint_vel = [qd[3], qd[4]];
    }

    /// Gravity direction expressed in the torso frame.
    pub fn gravity_in_body(&self) -> [f64; 2] {
        let (s, c) = self.pitch.sin_cos();
        [-s, -c]
    }

    pub fn foot_position(&self, model: &HopperModel) -> [f64; 2] {
        let p = ChainPoint::FOOT.scaled(model).position(&self.q());
        [p[0], p[1]]
    }
}

/// A point rigidly attached to the chain: `torso` meters along the torso
/// axis, `thigh` along the thigh, `shank` along the shank, then `sole`
/// along the sole, which is the shank direction turned by `sole_angle`.
#[derive(Debug, Clone, Copy)]
struct ChainPoint {
    torso: f64,
    thigh: f64,
    shank: f64,
    sole: f64,
    sole_angle: f64,
}

impl ChainPoint {
    /// Fractions of the respective segment lengths.
    const FOOT: ChainPoint = ChainPoint::new(0.0, 1.0, 1.0);

    const fn new(torso: f64, thigh: f64, shank: f64) -> Self {
        ChainPoint { torso, thigh, shank, sole: 0.0, sole_angle: 0.0 }
    }

    fn scaled(self, m: &HopperModel) -> ChainPoint {
        ChainPoint {
            torso: self.torso * m.torso_length,
            thigh: self.thigh * m.link_lengths[0],
            shank: self.shank * m.link_lengths[1],
            ..self
        }
    }

    /// Moves the point `offset` meters along the sole (positive is the toe).
    fn on_sole(self, m: &HopperModel, offset: f64) -> ChainPoint {
        ChainPoint { sole: offset, sole_angle: -(m.q_default[0] + m.q_default[1]), ..self }
    }

    fn position(&self, q: &Vec5) -> [f64; 2] {
        let (a1, a2) = (q[2] + q[3], q[2] + q[3] + q[4]);
        let a3 = a2 + self.sole_angle;
        [
            q[0] + self.torso * q[2].cos() + self.thigh * a1.sin() + self.shank * a2.sin() + self.sole * a3.cos(),
            q[1] + self.torso * q[2].sin() - self.thigh * a1.cos() - self.shank * a2.cos() + self.sole * a3.sin(),
        ]
    }

    /// Rows are x and z; columns follow the generalized coordinates.
    fn jacobian(&self, q: &Vec5) -> SMatrix<f64, 2, 5> {
        let (a1, a2) = (q[2] + q[3], q[2] + q[3] + q[4]);
        let a3 = a2 + self.sole_angle;
        let d1 = [self.thigh * a1.cos(), self.thigh * a1.sin()];
        let d2 = [
            self.shank * a2.cos() - self.sole * a3.sin(),
            self.shank * a2.sin() + self.sole * a3.cos(),
        ];
        let dt = [-self.torso * q[2].sin(), self.torso * q[2].cos()];
        SMatrix::<f64, 2, 5>::new(
            1.0, 0.0, dt[0] + d1[0] + d2[0], d1[0] + d2[0], d2[0],
            0.0, 1.0, dt[1] + d1[1] + d2[1], d1[1] + d2[1], d2[1],
        )
    }

    /// Velocity-product acceleration `J_dot * qd`.
    fn bias(&self, q: &Vec5, qd: &Vec5) -> [f64; 2] {
        let (a1, a2) = (q[2] + q[3], q[2] + q[3] + q[4]);
        let a3 = a2 + self.sole_angle;
        let (w0, w1, w2) = (qd[2], qd[2] + qd[3], qd[2] + qd[3] + qd[4]);
        [
            -self.torso * w0 * w0 * q[2].cos() - self.thigh * w1 * w1 * a1.sin() - self.shank * w2 * w2 * a2.sin()
                - self.sole * w2 * w2 * a3.cos(),
            -self.torso * w0 * w0 * q[2].sin() + self.thigh * w1 * w1 * a1.cos() + self.shank * w2 * w2 * a2.cos()
                - self.sole * w2 * w2 * a3.sin(),
        ]
    }
}

struct Probe {
    body: Body,
    point: ChainPoint,
    radius: f64,
}

/// Heel and toe come first, in that order.
fn probes(m: &HopperModel) -> [Probe; 8] {
    let p = |torso, thigh, shank| ChainPoint::new(torso, thigh, shank).scaled(m);
    let r = m.body_radius;
    [
        Probe { body: Body::Foot, point: p(0.0, 1.0, 1.0).on_sole(m, -m.sole_heel), radius: m.foot_radius },
        Probe { body: Body::Foot, point: p(0.0, 1.0, 1.0).on_sole(m, m.sole_toe), radius: m.foot_radius },
        Probe { body: Body::Shank, point: p(0.0, 1.0, 0.5), radius: r },
        Probe { body: Body::Thigh, point: p(0.0, 1.0, 0.0), radius: r },
        Probe { body: Body::Thigh, point: p(0.0, 0.5, 0.0), radius: r },
        Probe { body: Body::Torso, point: p(-0.5, 0.0, 0.0), radius: r },
        Probe { body: Body::Torso, point: p(0.5, 0.0, 0.0), radius: r },
        Probe { body: Body::Torso, point: p(0.0, 0.0, 0.0), radius: r },
    ]
}

/// Mass-carrying bodies: center of mass, mass, rotational inertia, rotation row.
fn mass_bodies(m: &HopperModel) -> [(ChainPoint, f64, f64, [f64; 5]); 3] {
    let [l1, l2] = m.link_lengths;
    let [m1, m2] = m.link_masses;
    [
        (ChainPoint::new(0.0, 0.0, 0.0), m.torso_mass, m.torso_inertia, [0.0, 0.0, 1.0, 0.0, 0.0]),
        (ChainPoint::new(0.0, l1 / 2.0, 0.0), m1, m1 * l1 * l1 / 12.0, [0.0, 0.0, 1.0, 1.0, 0.0]),
        (ChainPoint::new(0.0, l1, l2 / 2.0), m2, m2 * l2 * l2 / 12.0, [0.0, 0.0, 1.0, 1.0, 1.0]),
    ]
}

fn mass_matrix(m: &HopperModel, q: &Vec5) -> Mat5 {
    let mut mm = Mat5::zeros();
    for (pt, mass, inertia, rot) in mass_bodies(m) {
        let j = pt.jacobian(q);
        mm += j.transpose() * j * mass;
        let r = SVector::<f64, 5>::from(rot);
        mm += r * r.transpose() * inertia;
    }
    mm
}

/// Kinetic plus gravitational potential energy (zero potential at `z = 0`).
pub fn mechanical_energy(m: &HopperModel, s: &HopperState) -> f64 {
    let (q, qd) = (s.q(), s.qd());
    let kinetic = 0.5 * (qd.transpose() * mass_matrix(m, &q) * qd)[0];
    let potential: f64 = mass_bodies(m)
        .iter()
        .map(|(pt, mass, _, _)| mass * m.gravity * pt.position(&q)[1])
        .sum();
    kinetic + potential
}

/// What happened during one physics substep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstepReport {
    pub contact_forces: [[f64; 2]; 4],
    /// Deepest penetration seen per body this substep (negative when clear).
    pub penetration: [f64; 4],
    pub torques: [f64; 2],
}

impl SubstepReport {
    pub fn non_foot_contact(&self) -> Option<Body> {
        [Body::Torso, Body::Thigh, Body::Shank]
            .into_iter()
            .find(|b| self.contact_forces[b.index()][1] > 0.0)
    }
}

/// Advances the physics by one `sim_dt` toward joint targets `target`.
///
/// With `assist` set the assist spring acts on the torso.
pub fn substep(
    m: &HopperModel,
    s: &mut HopperState,
    hf: &Heightfield,
    target: &[f64; 2],
    assist: bool,
) -> SubstepReport {
    let (q, qd) = (s.q(), s.qd());
    // Velocity and position sensitivities of the spring-damper forces; they
    // enter the solve as `(M + dt D + dt^2 K) qdd = Q`.
    let mut damp = Mat5::zeros();
    let mut stiff = Mat5::zeros();
    let mut torques = [0.0; 2];
    for j in 0..2 {
        let t = m.pd_kp * (target[j] - s.joint_pos[j]) - m.pd_kd * s.joint_vel[j];
        torques[j] = t.clamp(-m.torque_limit, m.torque_limit);
        if t.abs() < m.torque_limit {
            damp[(3 + j, 3 + j)] += m.pd_kd;
            stiff[(3 + j, 3 + j)] += m.pd_kp;
        }
    }

    let mut gen = Vec5::zeros();
    gen[3] = torques[0];
    gen[4] = torques[1];

    for (pt, mass, _, _) in mass_bodies(m) {
        let j = pt.jacobian(&q);
        let b = pt.bias(&q, &qd);
        let f = SVector::<f64, 2>::new(-mass * b[0], -mass * (b[1] + m.gravity));
        gen += j.transpose() * f;
    }

    let mut forces = [[0.0f64; 2]; 4];
    let mut penetration = [f64::NEG_INFINITY; 4];
    let mut foot_touch = [false; 2];
    for (k, probe) in probes(m).iter().enumerate() {
        let p = probe.point.position(&q);
        let j = probe.point.jacobian(&q);
        let v = j * qd;
        let pen = hf.height_at(p[0]) - (p[1] - probe.radius);
        let bi = probe.body.index();
        penetration[bi] = penetration[bi].max(pen);
        if pen <= 0.0 {
            continue;
        }
        let fz = (m.contact_stiffness * pen - m.contact_damping * v[1]).max(0.0);
        let jz = j.row(1).transpose();
        let jx = j.row(0).transpose();
        if fz > 0.0 {
            damp += jz * jz.transpose() * m.contact_damping;
            stiff += jz * jz.transpose() * m.contact_stiffness;
        }
        let limit = m.friction_coeff * fz;
        let fx = if probe.body == Body::Foot {
            foot_touch[k] = true;
            let anchor = *s.foot_anchor[k].get_or_insert(p[0]);
            let spring = -m.contact_stiffness * (p[0] - anchor) - m.contact_damping * v[0];
            if spring.abs() > limit {
                let slip = limit.copysign(spring);
                s.foot_anchor[k] = Some(p[0] + (slip + m.contact_damping * v[0]) / m.contact_stiffness);
                slip
            } else {
                damp += jx * jx.transpose() * m.contact_damping;
                stiff += jx * jx.transpose() * m.contact_stiffness;
                spring
            }
        } else {
            let drag = -m.contact_damping * v[0];
            if drag.abs() < limit {
                damp += jx * jx.transpose() * m.contact_damping;
            }
            drag.clamp(-limit, limit)
        };
        forces[bi][0] += fx;
        forces[bi][1] += fz;
        gen += j.transpose() * SVector::<f64, 2>::new(fx, fz);
    }
    for k in 0..2 {
        if !foot_touch[k] {
            s.foot_anchor[k] = None;
        }
    }

    if assist {
        let a = &m.assist;
        gen[0] += -a.x_stiffness * (s.x - s.assist_anchor_x) - a.x_damping * s.vx;
        gen[2] += -a.pitch_stiffness * s.pitch - a.pitch_damping * s.pitch_rate;
        damp[(0, 0)] += a.x_damping;
        stiff[(0, 0)] += a.x_stiffness;
        damp[(2, 2)] += a.pitch_damping;
        stiff[(2, 2)] += a.pitch_stiffness;
    }

    let h = m.sim_dt;
    let mm = mass_matrix(m, &q) + damp * h + stiff * (h * h);
    let qdd = mm.cholesky().expect("mass matrix is positive definite").solve(&gen);
    let qd_new = qd + qdd * m.sim_dt;
    let mut q_new = q + qd_new * m.sim_dt;
    let mut qd_new = qd_new;
    for j in 0..2 {
        let [lo, hi] = m.joint_limits[j];
        let k = 3 + j;
        if q_new[k] < lo {
            q_new[k] = lo;
            qd_new[k] = qd_new[k].max(0.0);
        } else if q_new[k] > hi {
            q_new[k] = hi;
            qd_new[k] = qd_new[k].min(0.0);
        }
    }
    s.set_q(&q_new, &qd_new);
    s.torques = torques;
    s.contact_forces = forces;
    SubstepReport { contact_forces: forces, penetration, torques }
}

/// Spawns the hopper standing on the spawn platform, joints perturbed by a
/// seeded offset within ±0.05 rad.
pub fn reset(m: &HopperModel, hf: &Heightfield, seed: u64) -> HopperState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let joint_pos = [
        m.q_default[0] + rng.random_range(-RESET_JOINT_NOISE..=RESET_JOINT_NOISE),
        m.q_default[1] + rng.random_range(-RESET_JOINT_NOISE..=RESET_JOINT_NOISE),
    ];
    let x = hf.spawn_x();
    HopperState {
        x,
        z: hf.height_at(x) + m.standing_height(),
        pitch: 0.0,
        vx: 0.0,
        vz: 0.0,
        pitch_rate: 0.0,
        joint_pos,
        joint_vel: [0.0; 2],
        joint_acc: [0.0; 2],
        torques: [0.0; 2],
        prev_action: m.q_default,
        prev_prev_action: m.q_default,
        contact_forces: [[0.0; 2]; 4],
        foot_anchor: [None; 2],
        assist_anchor_x: x,
        command: [0.0; 2],
        step: 0,
        terminated: None,
    }
}

/// Everything the reward needs about one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub v: [f64; 2],
    pub v_cmd: f64,
    pub pitch_rate: f64,
    /// Always zero: the planar model has no yaw.
    pub yaw_rate: f64,
    pub yaw_rate_cmd: f64,
    pub gravity: [f64; 2],
    pub g_target: [f64; 2],
    pub torques: [f64; 2],
    pub joint_pos: [f64; 2],
    pub joint_vel: [f64; 2],
    pub joint_acc: [f64; 2],
    pub q_default: [f64; 2],
    pub action: [f64; 2],
    pub prev_action: [f64; 2],
    pub prev_prev_action: [f64; 2],
    pub contact_forces: [[f64; 2]; 4],
    pub foot_contact: bool,
    pub foot_x: f64,
    pub edge_distance: f64,
    pub torso_x: f64,
    pub spawn_x: f64,
    pub goal_x: f64,
    pub terminated: bool,
    pub termination_reason: Option<TerminationReason>,
    /// Zero-based substep within this control step at which the episode ended.
    pub termination_substep: Option<u32>,
}

/// Runs one control step: `control_decimation` substeps of PD tracking toward `action`.
pub fn step(
    m: &HopperModel,
    state: &HopperState,
    hf: &Heightfield,
    action: &[f64; 2],
    assist: bool,
) -> Result<(HopperState, StepInfo)> {
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::input("action must be finite"));
    }
    if let Some(reason) = state.terminated {
        return Err(Error::Contract(format!("episode already terminated ({})", reason.name())));
    }
    let mut s = state.clone();
    let vel_before = s.joint_vel;
    let mut reason = None;
    let mut at_substep = None;
    for k in 0..m.control_decimation {
        let report = substep(m, &mut s, hf, action, assist);
        if s.x >= hf.goal_x() || s.x > hf.extent() {
            reason = Some(TerminationReason::OutOfBounds);
        } else if let Some(body) = report.non_foot_contact() {
            reason = Some(TerminationReason::NonFootContact(body));
        }
        if reason.is_some() {
            at_substep = Some(k);
            break;
        }
    }
    let dt = m.control_dt();
    s.joint_acc = [(s.joint_vel[0] - vel_before[0]) / dt, (s.joint_vel[1] - vel_before[1]) / dt];
    s.prev_prev_action = state.prev_action;
    s.prev_action = *action;
    s.step += 1;
    if reason.is_none() && s.step >= m.episode_horizon {
        reason = Some(TerminationReason::Timeout);
    }
    s.terminated = reason;

    let foot = s.foot_position(m);
    let info = StepInfo {
        v: [s.vx, s.vz],
        v_cmd: s.command[0],
        pitch_rate: s.pitch_rate,
        yaw_rate: 0.0,
        yaw_rate_cmd: s.command[1],
        gravity: s.gravity_in_body(),
        g_target: m.g_target,
        torques: s.torques,
        joint_pos: s.joint_pos,
        joint_vel: s.joint_vel,
        joint_acc: s.joint_acc,
        q_default: m.q_default,
        action: *action,
        prev_action: state.prev_action,
        prev_prev_action: state.prev_prev_action,
        contact_forces: s.contact_forces,
        foot_contact: s.contact_forces[Body::Foot.index()][1] > 0.0,
        foot_x: foot[0],
        edge_distance: hf.nearest_edge_distance(foot[0]),
        torso_x: s.x,
        spawn_x: hf.spawn_x(),
        goal_x: hf.goal_x(),
        terminated: reason.is_some(),
        termination_reason: reason,
        termination_substep: at_substep,
    };
    Ok((s, info))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObsMode {
    Proprio,
    TerrainAware,
}

/// Observation layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsSpec {
    pub mode: ObsMode,
    pub proprio_dim: usize,
    pub heightmap_offsets_body: Vec<f64>,
    pub heightmap_offsets_foot: Vec<f64>,
    pub total_dim: usize,
}

impl ObsSpec {
    pub fn proprio() -> Self {
        ObsSpec {
            mode: ObsMode::Proprio,
            proprio_dim: PROPRIO_DIM,
            heightmap_offsets_body: Vec::new(),
            heightmap_offsets_foot: Vec::new(),
            total_dim: PROPRIO_DIM,
        }
    }

    /// Proprioception plus 16 body samples over ±0.375 m and 16 foot samples
    /// from 0.2 m behind to 0.55 m ahead of the foot.
    pub fn terrain_aware() -> Self {
        let body: Vec<f64> = (0..HEIGHTMAP_POINTS).map(|i| -0.375 + 0.05 * i as f64).collect();
        let foot: Vec<f64> = (0..HEIGHTMAP_POINTS).map(|i| -0.2 + 0.05 * i as f64).collect();
        let total_dim = PROPRIO_DIM + body.len() + foot.len();
        ObsSpec {
            mode: ObsMode::TerrainAware,
            proprio_dim: PROPRIO_DIM,
            heightmap_offsets_body: body,
            heightmap_offsets_foot: foot,
            total_dim,
        }
    }

    pub fn for_mode(mode: ObsMode) -> Self {
        match mode {
            ObsMode::Proprio => Self::proprio(),
            ObsMode::TerrainAware => Self::terrain_aware(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expect = match self.mode {
            ObsMode::Proprio => self.proprio_dim,
            ObsMode::TerrainAware => {
                self.proprio_dim + self.heightmap_offsets_body.len() + self.heightmap_offsets_foot.len()
            }
        };
        if self.total_dim != expect || self.proprio_dim != PROPRIO_DIM {
            return Err(Error::config(format!(
                "observation spec declares {} dims but its layout has {expect}",
                self.total_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub mode: ObsMode,
    pub values: Vec<f64>,
}

/// Builds the policy input for `state`.
///
/// Proprio layout: pitch rate, body-frame gravity (2), command (2), joint
/// angles (2), joint velocities (2), previous action (2). Rates are scaled
/// by 0.25; heightmaps are clipped to ±1 m.
pub fn assemble_obs(state: &HopperState, hf: &Heightfield, spec: &ObsSpec, model: &HopperModel) -> Observation {
    let g = state.gravity_in_body();
    let mut values = Vec::with_capacity(spec.total_dim);
    values.push(state.pitch_rate * RATE_SCALE);
    values.extend_from_slice(&g);
    values.extend_from_slice(&state.command);
    values.extend_from_slice(&state.joint_pos);
    values.extend(state.joint_vel.iter().map(|v| v * RATE_SCALE));
    values.extend_from_slice(&state.prev_action);
    if spec.mode == ObsMode::TerrainAware {
        let clip = |h: f64| h.clamp(-HEIGHTMAP_CLIP, HEIGHTMAP_CLIP);
        values.extend(sample_heightmap(hf, state.x, &spec.heightmap_offsets_body).into_iter().map(clip));
        let foot_x = state.foot_position(model)[0];
        values.extend(sample_heightmap(hf, foot_x, &spec.heightmap_offsets_foot).into_iter().map(clip));
    }
    Observation { mode: spec.mode, values }
}
