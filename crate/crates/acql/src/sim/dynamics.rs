//! Rigid-body torso dynamics with a lumped payload: point-mass translation
//! plus Euler rotation about the body origin with a constant world-frame
//! inertia, integrated with semi-implicit Euler.

use super::config::PayloadTruth;
use crate::estimator::EstimatorError;
use crate::robot::{gravity_feedforward, ContactState, RobotError, RobotModel, RobotState, NUM_LEGS};
use crate::so3::{canonical, So3Error, UnitQuat, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("numerical blowup at t = {t:.4} s")]
    NumericalBlowup { t: f64 },
    #[error("force distribution failed at t = {t:.4} s ({status})")]
    Distribution { t: f64, status: String },
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    So3(#[from] So3Error),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// World-frame gravity moment of the payload about the body origin (N m,
/// downward sense): (R r_p) x m_p g.
pub fn payload_moment_true(model: &RobotModel, payload: &PayloadTruth, q_b: &UnitQuat) -> Vec3 {
    let r_w = q_b.to_rotation_matrix().into_inner() * Vec3::from(payload.com_offset);
    r_w.cross(&(model.gravity_vec() * payload.mass))
}

/// Advance the torso one tick under the applied stance forces.
///
/// Translation treats the torso+payload as a point mass at the body origin;
/// rotation sums the contact-force moments about the origin with the link
/// and payload gravity moments and a gyroscopic term. The inertia tensor is
/// held in world axes (the torso stays near-level in every scenario this
/// harness runs).
pub fn step_dynamics(
    model: &RobotModel,
    payload: &PayloadTruth,
    state: &mut RobotState,
    contact: &ContactState,
    forces: &[Vec3; NUM_LEGS],
    t: f64,
    dt: f64,
) -> Result<(), SimError> {
    let m_tot = model.total_mass + payload.mass;
    let inertia = model.torso_inertia;
    let inv_inertia = inertia
        .try_inverse()
        .expect("inertia is SPD by construction");

    let mut f_net = model.gravity_vec() * m_tot;
    let mut torque = gravity_feedforward(model, &state.q_b).1
        + payload_moment_true(model, payload, &state.q_b);
    for leg in contact.stance_legs() {
        f_net += forces[leg];
        torque += (contact.foot_world[leg] - state.r_b).cross(&forces[leg]);
    }
    torque -= state.omega_b.cross(&(inertia * state.omega_b));

    let a = f_net / m_tot;
    let omega_dot = inv_inertia * torque;

    // semi-implicit Euler: velocities first, then positions with the new
    // velocities
    state.v_b += a * dt;
    state.r_b += state.v_b * dt;
    state.omega_b += omega_dot * dt;
    state.q_b = canonical(&(UnitQuat::from_scaled_axis(state.omega_b * dt) * state.q_b));
    state.a_b = a;

    let bad = !state.r_b.iter().all(|x| x.is_finite())
        || !state.v_b.iter().all(|x| x.is_finite())
        || !state.omega_b.iter().all(|x| x.is_finite())
        || state.v_b.norm() > 1e3
        || state.omega_b.norm() > 1e3;
    if bad {
        return Err(SimError::NumericalBlowup { t });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::nominal_stand_contact;
    use approx::assert_abs_diff_eq;

    fn model() -> RobotModel {
        RobotModel::kirin_default()
    }

    #[test]
    fn zero_gravity_zero_force_is_a_fixed_point() {
        let mut m = model();
        m.gravity = 0.0;
        let payload = PayloadTruth::default();
        let mut st = RobotState::at_rest(Vec3::new(0.0, 0.0, 0.4), UnitQuat::identity());
        let contact = ContactState {
            stance: [false; NUM_LEGS],
            foot_body: [Vec3::zeros(); NUM_LEGS],
            foot_world: [Vec3::zeros(); NUM_LEGS],
        };
        let forces = [Vec3::zeros(); NUM_LEGS];
        for k in 0..1000 {
            step_dynamics(&m, &payload, &mut st, &contact, &forces, k as f64 * 1e-3, 1e-3)
                .unwrap();
        }
        assert_abs_diff_eq!(st.r_b, Vec3::new(0.0, 0.0, 0.4), epsilon = 1e-14);
        assert_abs_diff_eq!(st.v_b, Vec3::zeros(), epsilon = 1e-14);
        assert_abs_diff_eq!(st.omega_b, Vec3::zeros(), epsilon = 1e-14);
        assert!(st.q_b.angle_to(&UnitQuat::identity()) < 1e-14);
    }

    #[test]
    fn symmetric_stand_equilibrium_does_not_drift() {
        let m = model();
        let payload = PayloadTruth {
            mass: 20.0,
            com_offset: [0.0; 3],
        };
        let mut st = RobotState::at_rest(Vec3::new(0.0, 0.0, 0.4), UnitQuat::identity());
        let contact = nominal_stand_contact(&m, &st, 0.4).unwrap();
        let w = (m.total_mass + payload.mass) * m.gravity;
        let forces = [Vec3::new(0.0, 0.0, w / 4.0); NUM_LEGS];
        // at identity attitude the link gravity moment vanishes by symmetry
        // and the uniform vertical forces balance exactly
        for k in 0..2000 {
            step_dynamics(&m, &payload, &mut st, &contact, &forces, k as f64 * 1e-3, 1e-3)
                .unwrap();
        }
        assert_abs_diff_eq!(st.r_b, Vec3::new(0.0, 0.0, 0.4), epsilon = 1e-9);
        assert_abs_diff_eq!(st.v_b, Vec3::zeros(), epsilon = 1e-9);
        assert!(st.omega_b.norm() < 1e-9);
    }

    #[test]
    fn free_body_rotational_energy_conserved() {
        // torque-free tumbling in zero gravity: E = 1/2 w^T I w should be
        // conserved to 1e-5 relative over 10 s at dt = 1e-4
        let mut m = model();
        m.gravity = 0.0;
        let payload = PayloadTruth::default();
        let mut st = RobotState::at_rest(Vec3::zeros(), UnitQuat::identity());
        st.omega_b = Vec3::new(0.15, 0.10, 0.05);
        let contact = ContactState {
            stance: [false; NUM_LEGS],
            foot_body: [Vec3::zeros(); NUM_LEGS],
            foot_world: [Vec3::zeros(); NUM_LEGS],
        };
        let forces = [Vec3::zeros(); NUM_LEGS];
        let energy = |w: &Vec3| 0.5 * w.dot(&(m.torso_inertia * w));
        let e0 = energy(&st.omega_b);
        let dt = 1e-4;
        for k in 0..100_000 {
            step_dynamics(&m, &payload, &mut st, &contact, &forces, k as f64 * dt, dt).unwrap();
        }
        let e1 = energy(&st.omega_b);
        assert!(
            ((e1 - e0) / e0).abs() < 1e-5,
            "energy drift {:.3e}",
            (e1 - e0) / e0
        );
    }

    #[test]
    fn blowup_is_detected() {
        let m = model();
        let payload = PayloadTruth::default();
        let mut st = RobotState::at_rest(Vec3::new(0.0, 0.0, 0.4), UnitQuat::identity());
        let mut contact = nominal_stand_contact(&m, &st, 0.4).unwrap();
        contact.stance = [true, false, false, false];
        let forces = [Vec3::new(0.0, 0.0, 1e9); NUM_LEGS];
        let mut failed = false;
        for k in 0..100 {
            if step_dynamics(&m, &payload, &mut st, &contact, &forces, k as f64 * 1e-3, 1e-3)
                .is_err()
            {
                failed = true;
                break;
            }
        }
        assert!(failed);
    }

    #[test]
    fn payload_moment_matches_hand_value() {
        let m = model();
        let p = PayloadTruth {
            mass: 50.0,
            com_offset: [0.15, 0.10, 0.0],
        };
        let tau = payload_moment_true(&m, &p, &UnitQuat::identity());
        // r x (m g) with g = (0,0,-9.81): (0.15,0.10,0) x (0,0,-490.5)
        assert_abs_diff_eq!(tau, Vec3::new(-49.05, 73.575, 0.0), epsilon = 1e-9);
    }
}
