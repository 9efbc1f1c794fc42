//! Kinematic and inertial description of the robot: 3-DoF legs (hip roll,
//! hip pitch, prismatic knee), gravity feedforward terms, leg odometry and
//! the torque/force statics mappings.
//!
//! Leg convention: hip roll axis along body x, hip pitch axis along body y,
//! prismatic extension along the thigh. The prismatic joint value is the
//! full hip-to-foot length; its admissible interval spans the knee travel.

use crate::so3::{Mat3, UnitQuat, Vec3};
use serde::Deserialize;
use thiserror::Error;

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RobotError {
    #[error("joint value out of mechanism range (leg {leg}, joint {joint})")]
    JointOutOfRange { leg: usize, joint: usize },
    #[error("foot target outside the reachable shell (leg {leg})")]
    Unreachable { leg: usize },
    #[error("leg jacobian singular (leg {leg})")]
    SingularConfiguration { leg: usize },
    #[error("no stance feet")]
    NoStanceFeet,
    #[error("invalid robot description: {0}")]
    BadModel(String),
}

/// Immutable robot description. Shareable across threads.
#[derive(Debug, Clone)]
pub struct RobotModel {
    /// Torso inertia about the body origin, body frame (kg m^2).
    pub torso_inertia: Mat3,
    /// Lumped link masses (kg); the first entry is the torso.
    pub link_masses: Vec<f64>,
    /// Body-frame CoM offset of each lumped link (m).
    pub link_com_offsets: Vec<Vec3>,
    /// Hip mount points in the body frame (m), legs ordered FL, FR, RL, RR.
    pub hip_mounts: [Vec3; 4],
    /// Admissible hip-to-foot length interval of the prismatic knee (m).
    pub knee_min: f64,
    pub knee_max: f64,
    /// Hip roll / hip pitch mechanism half-ranges (rad).
    pub roll_limit: f64,
    pub pitch_limit: f64,
    /// Total mass, equal to the sum of link masses (kg).
    pub total_mass: f64,
    /// Ground friction coefficient.
    pub friction: f64,
    /// Per-joint actuation limits within one leg: [roll, pitch, knee].
    /// N m for the revolute joints, N for the prismatic knee.
    pub tau_min: [f64; 3],
    pub tau_max: [f64; 3],
    /// Gravity magnitude (m/s^2).
    pub gravity: f64,
}

#[derive(Debug, Deserialize)]
struct RobotModelFile {
    torso_inertia_diag: [f64; 3],
    link_masses: Vec<f64>,
    link_com_offsets: Vec<[f64; 3]>,
    hip_mounts: [[f64; 3]; 4],
    knee_travel: [f64; 2],
    roll_limit_deg: f64,
    pitch_limit_deg: f64,
    friction: f64,
    tau_min: [f64; 3],
    tau_max: [f64; 3],
    #[serde(default = "default_gravity")]
    gravity: f64,
}

fn default_gravity() -> f64 {
    9.81
}

impl RobotModel {
    /// Kirin-scale defaults: 50 kg total, 0.70 x 0.24 m footprint,
    /// box-model inertia, 300 mm knee travel.
    pub fn kirin_default() -> Self {
        let m = Self {
            torso_inertia: Mat3::from_diagonal(&Vec3::new(1.5, 4.0, 4.5)),
            link_masses: vec![38.0, 3.0, 3.0, 3.0, 3.0],
            link_com_offsets: vec![
                Vec3::zeros(),
                Vec3::new(0.35, 0.12, -0.1),
                Vec3::new(0.35, -0.12, -0.1),
                Vec3::new(-0.35, 0.12, -0.1),
                Vec3::new(-0.35, -0.12, -0.1),
            ],
            hip_mounts: [
                Vec3::new(0.35, 0.12, 0.0),
                Vec3::new(0.35, -0.12, 0.0),
                Vec3::new(-0.35, 0.12, 0.0),
                Vec3::new(-0.35, -0.12, 0.0),
            ],
            knee_min: 0.25,
            knee_max: 0.55,
            roll_limit: 140f64.to_radians(),
            pitch_limit: 180f64.to_radians(),
            total_mass: 50.0,
            friction: 0.6,
            tau_min: [-200.0, -200.0, -3000.0],
            tau_max: [200.0, 200.0, 3000.0],
            gravity: 9.81,
        };
        m.validate().expect("default model must be valid");
        m
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RobotError> {
        let f: RobotModelFile =
            toml::from_str(text).map_err(|e| RobotError::BadModel(e.to_string()))?;
        let model = Self {
            torso_inertia: Mat3::from_diagonal(&Vec3::from(f.torso_inertia_diag)),
            total_mass: f.link_masses.iter().sum(),
            link_masses: f.link_masses,
            link_com_offsets: f.link_com_offsets.iter().map(|v| Vec3::from(*v)).collect(),
            hip_mounts: [
                Vec3::from(f.hip_mounts[0]),
                Vec3::from(f.hip_mounts[1]),
                Vec3::from(f.hip_mounts[2]),
                Vec3::from(f.hip_mounts[3]),
            ],
            knee_min: f.knee_travel[0],
            knee_max: f.knee_travel[1],
            roll_limit: f.roll_limit_deg.to_radians(),
            pitch_limit: f.pitch_limit_deg.to_radians(),
            friction: f.friction,
            tau_min: f.tau_min,
            tau_max: f.tau_max,
            gravity: f.gravity,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), RobotError> {
        let sum: f64 = self.link_masses.iter().sum();
        if (sum - self.total_mass).abs() > 1e-12 {
            return Err(RobotError::BadModel(
                "total mass must equal the sum of link masses".into(),
            ));
        }
        if self.link_masses.len() != self.link_com_offsets.len() {
            return Err(RobotError::BadModel("mass/offset length mismatch".into()));
        }
        if self.friction <= 0.0 {
            return Err(RobotError::BadModel("friction must be positive".into()));
        }
        let travel = self.knee_max - self.knee_min;
        if !(0.0..=0.3 + 1e-12).contains(&travel) || self.knee_min < 0.0 {
            return Err(RobotError::BadModel("knee travel outside [0, 0.3] m".into()));
        }
        for j in 0..3 {
            if self.tau_min[j] >= self.tau_max[j] {
                return Err(RobotError::BadModel("tau_min must be below tau_max".into()));
            }
        }
        // symmetric positive definite check on the inertia
        let i = &self.torso_inertia;
        if (i - i.transpose()).norm() > 1e-12 || i.symmetric_eigenvalues().min() <= 0.0 {
            return Err(RobotError::BadModel("torso inertia must be SPD".into()));
        }
        Ok(())
    }

    /// World-frame gravity vector (0, 0, -g).
    pub fn gravity_vec(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, -self.gravity)
    }

    fn check_leg_joints(&self, leg: usize, q: &[f64; 3]) -> Result<(), RobotError> {
        if q[0].abs() > self.roll_limit {
            return Err(RobotError::JointOutOfRange { leg, joint: 0 });
        }
        if q[1].abs() > self.pitch_limit {
            return Err(RobotError::JointOutOfRange { leg, joint: 1 });
        }
        if q[2] < self.knee_min - 1e-12 || q[2] > self.knee_max + 1e-12 {
            return Err(RobotError::JointOutOfRange { leg, joint: 2 });
        }
        Ok(())
    }
}

/// Full robot state: torso pose/twist plus joint kinematics and torques.
#[derive(Debug, Clone)]
pub struct RobotState {
    pub r_b: Vec3,
    pub v_b: Vec3,
    pub a_b: Vec3,
    pub q_b: UnitQuat,
    pub omega_b: Vec3,
    pub joint_q: [f64; NUM_JOINTS],
    pub joint_qd: [f64; NUM_JOINTS],
    pub joint_tau: [f64; NUM_JOINTS],
}

impl RobotState {
    pub fn at_rest(r_b: Vec3, q_b: UnitQuat) -> Self {
        Self {
            r_b,
            v_b: Vec3::zeros(),
            a_b: Vec3::zeros(),
            q_b,
            omega_b: Vec3::zeros(),
            joint_q: [0.0; NUM_JOINTS],
            joint_qd: [0.0; NUM_JOINTS],
            joint_tau: [0.0; NUM_JOINTS],
        }
    }

    pub fn leg_q(&self, leg: usize) -> [f64; 3] {
        [
            self.joint_q[3 * leg],
            self.joint_q[3 * leg + 1],
            self.joint_q[3 * leg + 2],
        ]
    }

    pub fn leg_qd(&self, leg: usize) -> [f64; 3] {
        [
            self.joint_qd[3 * leg],
            self.joint_qd[3 * leg + 1],
            self.joint_qd[3 * leg + 2],
        ]
    }

    pub fn leg_tau(&self, leg: usize) -> [f64; 3] {
        [
            self.joint_tau[3 * leg],
            self.joint_tau[3 * leg + 1],
            self.joint_tau[3 * leg + 2],
        ]
    }

    pub fn set_leg_q(&mut self, leg: usize, q: [f64; 3]) {
        self.joint_q[3 * leg..3 * leg + 3].copy_from_slice(&q);
    }

    pub fn set_leg_qd(&mut self, leg: usize, qd: [f64; 3]) {
        self.joint_qd[3 * leg..3 * leg + 3].copy_from_slice(&qd);
    }
}

/// Contact flags and foot positions per leg.
#[derive(Debug, Clone)]
pub struct ContactState {
    pub stance: [bool; NUM_LEGS],
    pub foot_body: [Vec3; NUM_LEGS],
    pub foot_world: [Vec3; NUM_LEGS],
}

impl ContactState {
    pub fn stance_count(&self) -> usize {
        self.stance.iter().filter(|s| **s).count()
    }

    pub fn stance_legs(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_LEGS).filter(|&i| self.stance[i])
    }
}

/// Leg direction for roll/pitch; length 1 thigh axis.
fn leg_axis(roll: f64, pitch: f64) -> Vec3 {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    Vec3::new(sp, sr * cp, -cr * cp)
}

/// Closed-form forward kinematics for one leg, body frame.
pub fn leg_forward_kinematics(
    model: &RobotModel,
    leg: usize,
    q: &[f64; 3],
) -> Result<Vec3, RobotError> {
    model.check_leg_joints(leg, q)?;
    Ok(model.hip_mounts[leg] + leg_axis(q[0], q[1]) * q[2])
}

/// Forward kinematics for all four legs.
pub fn forward_kinematics(
    model: &RobotModel,
    joint_q: &[f64; NUM_JOINTS],
) -> Result<[Vec3; NUM_LEGS], RobotError> {
    let mut out = [Vec3::zeros(); NUM_LEGS];
    for leg in 0..NUM_LEGS {
        let q = [joint_q[3 * leg], joint_q[3 * leg + 1], joint_q[3 * leg + 2]];
        out[leg] = leg_forward_kinematics(model, leg, &q)?;
    }
    Ok(out)
}

/// Analytic inverse kinematics: joint triple reproducing the body-frame
/// foot target.
pub fn inverse_kinematics(
    model: &RobotModel,
    foot_body: &Vec3,
    leg: usize,
) -> Result<[f64; 3], RobotError> {
    let t = foot_body - model.hip_mounts[leg];
    let len = t.norm();
    if len < model.knee_min - 1e-12 || len > model.knee_max + 1e-12 {
        return Err(RobotError::Unreachable { leg });
    }
    let pitch = (t.x / len).clamp(-1.0, 1.0).asin();
    // cos(pitch) >= 0 from asin; the leg cannot fold above the hip.
    let roll = if t.y.abs() < 1e-15 && t.z.abs() < 1e-15 {
        0.0
    } else {
        t.y.atan2(-t.z)
    };
    let q = [roll, pitch, len];
    model
        .check_leg_joints(leg, &q)
        .map_err(|_| RobotError::Unreachable { leg })?;
    Ok(q)
}

/// 3x3 jacobian mapping leg joint rates to body-frame foot velocity.
/// Columns are the analytic partials with respect to roll, pitch, length.
pub fn foot_jacobian(model: &RobotModel, leg: usize, q: &[f64; 3]) -> Result<Mat3, RobotError> {
    model.check_leg_joints(leg, q)?;
    let (sr, cr) = q[0].sin_cos();
    let (sp, cp) = q[1].sin_cos();
    let len = q[2];
    let d_roll = Vec3::new(0.0, cr * cp, sr * cp) * len;
    let d_pitch = Vec3::new(cp, -sr * sp, cr * sp) * len;
    let d_len = leg_axis(q[0], q[1]);
    Ok(Mat3::from_columns(&[d_roll, d_pitch, d_len]))
}

fn jacobian_checked(model: &RobotModel, leg: usize, q: &[f64; 3]) -> Result<Mat3, RobotError> {
    let j = foot_jacobian(model, leg, q)?;
    if j.determinant().abs() < 1e-9 {
        return Err(RobotError::SingularConfiguration { leg });
    }
    Ok(j)
}

/// Per-leg world-frame contact force recovered from measured joint torques
/// (statics inverse of the torque mapping). Swing legs report zero.
pub fn contact_forces_from_torques(
    model: &RobotModel,
    state: &RobotState,
    contact: &ContactState,
) -> Result<[Vec3; NUM_LEGS], RobotError> {
    let rot = state.q_b.to_rotation_matrix().into_inner();
    let mut out = [Vec3::zeros(); NUM_LEGS];
    for leg in contact.stance_legs() {
        let j = jacobian_checked(model, leg, &state.leg_q(leg))?;
        let tau = Vec3::from(state.leg_tau(leg));
        let f_body = j
            .transpose()
            .lu()
            .solve(&tau)
            .ok_or(RobotError::SingularConfiguration { leg })?;
        out[leg] = rot * f_body;
    }
    Ok(out)
}

/// Leg joint torques realizing a world-frame foot force on one leg:
/// tau = J^T R^T F.
pub fn leg_torques_from_force(
    model: &RobotModel,
    state: &RobotState,
    leg: usize,
    force_world: &Vec3,
) -> Result<[f64; 3], RobotError> {
    let rot = state.q_b.to_rotation_matrix().into_inner();
    let j = jacobian_checked(model, leg, &state.leg_q(leg))?;
    let tau = j.transpose() * (rot.transpose() * force_world);
    Ok([tau.x, tau.y, tau.z])
}

/// Link gravity terms: total gravity force and the world-frame gravity
/// moment of the lumped links about the body origin. Both use the downward
/// gravity vector; the controller negates them into support feedforward.
pub fn gravity_feedforward(model: &RobotModel, q_b: &UnitQuat) -> (Vec3, Vec3) {
    let g_vec = model.gravity_vec();
    let rot = q_b.to_rotation_matrix().into_inner();
    let force = g_vec * model.total_mass;
    let mut moment = Vec3::zeros();
    for (m_i, r_i) in model.link_masses.iter().zip(&model.link_com_offsets) {
        moment += (rot * r_i).cross(&(g_vec * *m_i));
    }
    (force, moment)
}

/// Torso position and velocity estimated from the stance-leg kinematic
/// chains, rotated by the measured orientation. Position is anchored at the
/// world positions of the stance feet.
pub fn body_odometry(
    model: &RobotModel,
    joint_q: &[f64; NUM_JOINTS],
    joint_qd: &[f64; NUM_JOINTS],
    contact: &ContactState,
    q_b: &UnitQuat,
) -> Result<(Vec3, Vec3), RobotError> {
    let n = contact.stance_count();
    if n == 0 {
        return Err(RobotError::NoStanceFeet);
    }
    let rot = q_b.to_rotation_matrix().into_inner();
    let mut r_sum = Vec3::zeros();
    let mut v_sum = Vec3::zeros();
    for leg in contact.stance_legs() {
        let q = [joint_q[3 * leg], joint_q[3 * leg + 1], joint_q[3 * leg + 2]];
        let qd = Vec3::new(joint_qd[3 * leg], joint_qd[3 * leg + 1], joint_qd[3 * leg + 2]);
        let foot_body = leg_forward_kinematics(model, leg, &q)?;
        let j = foot_jacobian(model, leg, &q)?;
        r_sum += contact.foot_world[leg] - rot * foot_body;
        v_sum += -(rot * (j * qd));
    }
    Ok((r_sum / n as f64, v_sum / n as f64))
}
