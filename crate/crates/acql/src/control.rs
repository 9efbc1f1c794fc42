//! Body wrench PID with gravity/payload feedforward, contact-force
//! distribution QP assembly, and the mapping back to joint torques.

use crate::estimator::PayloadEstimate;
use crate::qp::{QpProblem, QpSolution, QpSolver, QpStatus};
use crate::robot::{
    foot_jacobian, inverse_kinematics, leg_torques_from_force, ContactState, RobotError,
    RobotModel, RobotState, NUM_JOINTS, NUM_LEGS,
};
use crate::so3::{orientation_error, skew, So3Error, UnitQuat, Vec3};
use nalgebra::{DMatrix, DVector, Matrix3};
use serde::Deserialize;

/// PID and distribution weights. Diagonal matrices stored as their
/// diagonals; R is a uniform regularizer on the force variables.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct GainSet {
    pub kp_f: [f64; 3],
    pub ki_f: [f64; 3],
    pub kd_f: [f64; 3],
    pub kp_t: [f64; 3],
    pub ki_t: [f64; 3],
    pub kd_t: [f64; 3],
    /// Diagonal of Q, wrench tracking weight (force xyz, torque xyz).
    pub q_weight: [f64; 6],
    /// Uniform diagonal of R, force regularization. Strictly positive.
    pub r_reg: f64,
    /// Force integral clamp as a fraction of (m + m_hat) g per axis.
    pub integral_clamp_force_frac: f64,
    /// Torque integral clamp (N m per axis).
    pub integral_clamp_torque: f64,
}

impl Default for GainSet {
    fn default() -> Self {
        Self {
            kp_f: [300.0; 3],
            ki_f: [30.0; 3],
            kd_f: [30.0; 3],
            kp_t: [200.0; 3],
            ki_t: [20.0; 3],
            kd_t: [20.0; 3],
            q_weight: [1.0, 1.0, 1.0, 10.0, 10.0, 10.0],
            r_reg: 1e-3,
            integral_clamp_force_frac: 0.3,
            integral_clamp_torque: 50.0,
        }
    }
}

impl GainSet {
    pub fn validate(&self) -> Result<(), RobotError> {
        let all = self
            .kp_f
            .iter()
            .chain(&self.ki_f)
            .chain(&self.kd_f)
            .chain(&self.kp_t)
            .chain(&self.ki_t)
            .chain(&self.kd_t)
            .chain(&self.q_weight);
        for &g in all {
            if !(g >= 0.0) {
                return Err(RobotError::BadModel("negative gain".into()));
            }
        }
        if !(self.r_reg > 0.0) {
            return Err(RobotError::BadModel("R must be strictly positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyWrench {
    pub force: Vec3,
    pub torque: Vec3,
}

#[derive(Debug, Clone)]
pub struct MotionTarget {
    pub r_d: Vec3,
    pub v_d: Vec3,
    pub a_d: Vec3,
    pub q_d: UnitQuat,
    pub omega_d: Vec3,
}

impl MotionTarget {
    pub fn hold(r_d: Vec3, q_d: UnitQuat) -> Self {
        Self {
            r_d,
            v_d: Vec3::zeros(),
            a_d: Vec3::zeros(),
            q_d,
            omega_d: Vec3::zeros(),
        }
    }
}

/// Body state as seen by the controller (odometry position/velocity plus
/// measured attitude and rates).
#[derive(Debug, Clone, Copy)]
pub struct BodyObservation {
    pub r: Vec3,
    pub v: Vec3,
    pub q: UnitQuat,
    pub omega: Vec3,
}

/// Owns the PID integral state. One per control thread.
#[derive(Debug, Clone)]
pub struct Controller {
    pub gains: GainSet,
    int_pos: Vec3,
    int_ori: Vec3,
    prev_err_pos: Option<Vec3>,
    prev_err_ori: Option<Vec3>,
    integral_enabled: bool,
}

impl Controller {
    pub fn new(gains: GainSet) -> Self {
        Self {
            gains,
            int_pos: Vec3::zeros(),
            int_ori: Vec3::zeros(),
            prev_err_pos: None,
            prev_err_ori: None,
            integral_enabled: true,
        }
    }

    pub fn set_integral_enabled(&mut self, enabled: bool) {
        self.integral_enabled = enabled;
    }

    pub fn reset_integrals(&mut self) {
        self.int_pos = Vec3::zeros();
        self.int_ori = Vec3::zeros();
        self.prev_err_pos = None;
        self.prev_err_ori = None;
    }

    /// Desired body wrench: PID on position/orientation plus acceleration,
    /// gravity and payload feedforward.
    ///
    /// `grav` is the (force, moment) pair from `gravity_feedforward`, both
    /// in the downward sense; they are negated here into support terms.
    /// `payload_moment` is the estimated payload gravity moment (downward
    /// sense, N m), likewise negated.
    pub fn compute_body_wrench(
        &mut self,
        model: &RobotModel,
        target: &MotionTarget,
        obs: &BodyObservation,
        grav: (Vec3, Vec3),
        payload: &PayloadEstimate,
        payload_moment: &Vec3,
        dt: f64,
    ) -> Result<BodyWrench, So3Error> {
        let e_pos = target.r_d - obs.r;
        let e_vel = target.v_d - obs.v;
        let e_ori = orientation_error(&target.q_d, &obs.q)?;
        let e_rate = target.omega_d - obs.omega;

        if self.integral_enabled {
            let prev_p = self.prev_err_pos.unwrap_or(e_pos);
            let prev_o = self.prev_err_ori.unwrap_or(e_ori);
            self.int_pos += (prev_p + e_pos) * (0.5 * dt);
            self.int_ori += (prev_o + e_ori) * (0.5 * dt);
            let clamp_f = self.gains.integral_clamp_force_frac
                * (model.total_mass + payload.m_p)
                * model.gravity;
            clamp_integral(&mut self.int_pos, &self.gains.ki_f, clamp_f);
            clamp_integral(&mut self.int_ori, &self.gains.ki_t, self.gains.integral_clamp_torque);
        }
        self.prev_err_pos = Some(e_pos);
        self.prev_err_ori = Some(e_ori);

        let g = &self.gains;
        let force = diag_mul(&g.kp_f, &e_pos)
            + diag_mul(&g.ki_f, &self.int_pos)
            + diag_mul(&g.kd_f, &e_vel)
            + target.a_d * (model.total_mass + payload.m_p)
            - grav.0
            - model.gravity_vec() * payload.m_p;
        let torque = diag_mul(&g.kp_t, &e_ori)
            + diag_mul(&g.ki_t, &self.int_ori)
            + diag_mul(&g.kd_t, &e_rate)
            - grav.1
            - payload_moment;
        Ok(BodyWrench { force, torque })
    }
}

fn diag_mul(d: &[f64; 3], v: &Vec3) -> Vec3 {
    Vec3::new(d[0] * v.x, d[1] * v.y, d[2] * v.z)
}

fn clamp_integral(int: &mut Vec3, ki: &[f64; 3], limit: f64) {
    for i in 0..3 {
        if ki[i] > 0.0 {
            let lim = limit / ki[i];
            int[i] = int[i].clamp(-lim, lim);
        }
    }
}

/// Knobs for the infeasibility fallback ladder.
#[derive(Debug, Clone, Copy)]
pub struct DistributionOptions {
    pub torque_rows: bool,
    /// Multiplier on the torque half of the wrench target.
    pub wrench_torque_scale: f64,
    /// Add an equality row pinning the total vertical force to the wrench:
    /// sum F_iz = F_b,z. Keeps the weight-support channel exact instead of
    /// letting the regularizer shave it.
    pub weight_equality: bool,
}

impl Default for DistributionOptions {
    fn default() -> Self {
        Self {
            torque_rows: true,
            wrench_torque_scale: 1.0,
            weight_equality: false,
        }
    }
}

/// Distribution QP together with the stance-leg ordering of its variables.
#[derive(Debug, Clone)]
pub struct DistributionProblem {
    pub qp: QpProblem,
    pub stance: Vec<usize>,
}

/// Build the force-distribution QP: minimize (AF - B)^T Q (AF - B) + F^T R F
/// subject to the friction pyramid, unilateral contact and joint-torque
/// limits per stance foot. Swing-leg variables are eliminated.
pub fn assemble_distribution(
    wrench: &BodyWrench,
    contact: &ContactState,
    model: &RobotModel,
    state: &RobotState,
    gains: &GainSet,
    opts: &DistributionOptions,
) -> Result<DistributionProblem, RobotError> {
    let stance: Vec<usize> = contact.stance_legs().collect();
    if stance.is_empty() {
        return Err(RobotError::NoStanceFeet);
    }
    let n = 3 * stance.len();

    let mut a = DMatrix::zeros(6, n);
    for (j, &leg) in stance.iter().enumerate() {
        let r_bc = contact.foot_world[leg] - state.r_b;
        a.view_mut((0, 3 * j), (3, 3)).copy_from(&Matrix3::identity());
        a.view_mut((3, 3 * j), (3, 3)).copy_from(&skew(&r_bc));
    }
    let mut b = DVector::zeros(6);
    b.fixed_rows_mut::<3>(0).copy_from(&wrench.force);
    b.fixed_rows_mut::<3>(3)
        .copy_from(&(wrench.torque * opts.wrench_torque_scale));

    let q = DMatrix::from_diagonal(&DVector::from_row_slice(&gains.q_weight));
    let h = (a.transpose() * &q * &a) * 2.0 + DMatrix::identity(n, n) * (2.0 * gains.r_reg);
    let f = -(a.transpose() * &q * &b) * 2.0;

    let mu = model.friction;
    let rows_per_leg = if opts.torque_rows { 11 } else { 5 };
    let m_rows = rows_per_leg * stance.len();
    let mut a_in = DMatrix::zeros(m_rows, n);
    let mut b_in = DVector::zeros(m_rows);
    let rot = state.q_b.to_rotation_matrix().into_inner();
    for (j, &leg) in stance.iter().enumerate() {
        let r0 = rows_per_leg * j;
        let c = 3 * j;
        //  F_x - mu F_z <= 0
        a_in[(r0, c)] = 1.0;
        a_in[(r0, c + 2)] = -mu;
        // -F_x - mu F_z <= 0
        a_in[(r0 + 1, c)] = -1.0;
        a_in[(r0 + 1, c + 2)] = -mu;
        //  F_y - mu F_z <= 0
        a_in[(r0 + 2, c + 1)] = 1.0;
        a_in[(r0 + 2, c + 2)] = -mu;
        // -F_y - mu F_z <= 0
        a_in[(r0 + 3, c + 1)] = -1.0;
        a_in[(r0 + 3, c + 2)] = -mu;
        // -F_z <= 0
        a_in[(r0 + 4, c + 2)] = -1.0;
        if opts.torque_rows {
            let jac = foot_jacobian(model, leg, &state.leg_q(leg))?;
            let map = jac.transpose() * rot.transpose();
            for r in 0..3 {
                for cc in 0..3 {
                    a_in[(r0 + 5 + r, c + cc)] = map[(r, cc)];
                    a_in[(r0 + 8 + r, c + cc)] = -map[(r, cc)];
                }
                b_in[r0 + 5 + r] = model.tau_max[r];
                b_in[r0 + 8 + r] = -model.tau_min[r];
            }
        }
    }

    let (a_eq, b_eq) = if opts.weight_equality {
        let mut a_eq = DMatrix::zeros(1, n);
        for j in 0..stance.len() {
            a_eq[(0, 3 * j + 2)] = 1.0;
        }
        (a_eq, DVector::from_element(1, wrench.force.z))
    } else {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    };

    Ok(DistributionProblem {
        qp: QpProblem {
            h,
            f,
            a_in,
            b_in,
            a_eq,
            b_eq,
        },
        stance,
    })
}

/// Map a QP solution back to per-leg world forces; swing legs are zero.
pub fn distribute_contact_forces(
    solver: &mut QpSolver,
    prob: &DistributionProblem,
) -> ([Vec3; NUM_LEGS], QpSolution) {
    let sol = solver.solve(&prob.qp);
    let mut forces = [Vec3::zeros(); NUM_LEGS];
    for (j, &leg) in prob.stance.iter().enumerate() {
        forces[leg] = Vec3::new(sol.x[3 * j], sol.x[3 * j + 1], sol.x[3 * j + 2]);
    }
    (forces, sol)
}

/// Which rung of the infeasibility ladder produced the accepted solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackLevel {
    None,
    DroppedTorqueRows,
    ScaledTorque,
}

/// Solve the distribution QP with the fallback ladder: full problem, then
/// without torque rows, then with the torque target halved as well.
pub fn distribute_with_fallback(
    solver: &mut QpSolver,
    wrench: &BodyWrench,
    contact: &ContactState,
    model: &RobotModel,
    state: &RobotState,
    gains: &GainSet,
) -> Result<([Vec3; NUM_LEGS], QpSolution, FallbackLevel), RobotError> {
    distribute_with_fallback_opts(
        solver,
        wrench,
        contact,
        model,
        state,
        gains,
        &DistributionOptions::default(),
    )
}

/// Fallback ladder with a caller-supplied base configuration; the ladder
/// varies only the torque handling.
#[allow(clippy::too_many_arguments)]
pub fn distribute_with_fallback_opts(
    solver: &mut QpSolver,
    wrench: &BodyWrench,
    contact: &ContactState,
    model: &RobotModel,
    state: &RobotState,
    gains: &GainSet,
    base: &DistributionOptions,
) -> Result<([Vec3; NUM_LEGS], QpSolution, FallbackLevel), RobotError> {
    let attempts = [
        (
            DistributionOptions {
                torque_rows: base.torque_rows,
                wrench_torque_scale: base.wrench_torque_scale,
                ..*base
            },
            FallbackLevel::None,
        ),
        (
            DistributionOptions {
                torque_rows: false,
                wrench_torque_scale: base.wrench_torque_scale,
                ..*base
            },
            FallbackLevel::DroppedTorqueRows,
        ),
        (
            DistributionOptions {
                torque_rows: false,
                wrench_torque_scale: 0.5 * base.wrench_torque_scale,
                ..*base
            },
            FallbackLevel::ScaledTorque,
        ),
    ];
    let mut last = None;
    for (opts, level) in attempts {
        let prob = assemble_distribution(wrench, contact, model, state, gains, &opts)?;
        if level != FallbackLevel::None {
            solver.reset();
        }
        let (forces, sol) = distribute_contact_forces(solver, &prob);
        let ok = sol.status == QpStatus::Optimal;
        last = Some((forces, sol, level));
        if ok {
            break;
        }
    }
    Ok(last.expect("at least one attempt"))
}

/// Stance-leg joint torques realizing the world-frame forces; swing legs
/// get zero (tracking torques are the harness's job).
pub fn joint_torques_from_forces(
    model: &RobotModel,
    state: &RobotState,
    contact: &ContactState,
    forces: &[Vec3; NUM_LEGS],
) -> Result<[f64; NUM_JOINTS], RobotError> {
    let mut tau = [0.0; NUM_JOINTS];
    for leg in contact.stance_legs() {
        let t = leg_torques_from_force(model, state, leg, &forces[leg])?;
        tau[3 * leg..3 * leg + 3].copy_from_slice(&t);
    }
    Ok(tau)
}

/// Stand configuration helper: contact state with every foot directly below
/// its hip at the given leg length, anchored at the current body pose.
pub fn nominal_stand_contact(
    model: &RobotModel,
    state: &RobotState,
    leg_len: f64,
) -> Result<ContactState, RobotError> {
    let rot = state.q_b.to_rotation_matrix().into_inner();
    let mut c = ContactState {
        stance: [true; NUM_LEGS],
        foot_body: [Vec3::zeros(); NUM_LEGS],
        foot_world: [Vec3::zeros(); NUM_LEGS],
    };
    for leg in 0..NUM_LEGS {
        let fb = model.hip_mounts[leg] + Vec3::new(0.0, 0.0, -leg_len);
        inverse_kinematics(model, &fb, leg)?;
        c.foot_body[leg] = fb;
        c.foot_world[leg] = state.r_b + rot * fb;
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::inverse_kinematics;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn model() -> RobotModel {
        RobotModel::kirin_default()
    }

    fn no_payload() -> PayloadEstimate {
        PayloadEstimate {
            m_p: 0.0,
            d_hat: Vec3::zeros(),
            converged: false,
        }
    }

    /// Standing state at height h with feet below the hips, joints from IK.
    fn stand_state(m: &RobotModel, h: f64) -> (RobotState, ContactState) {
        let mut st = RobotState::at_rest(Vec3::new(0.0, 0.0, h), UnitQuat::identity());
        let contact = nominal_stand_contact(m, &st, h).unwrap();
        for leg in 0..NUM_LEGS {
            let q = inverse_kinematics(m, &contact.foot_body[leg], leg).unwrap();
            st.set_leg_q(leg, q);
        }
        (st, contact)
    }

    #[test]
    fn wrench_equilibrium_feedforward_only() {
        let m = model();
        let mut ctrl = Controller::new(GainSet::default());
        let target = MotionTarget::hold(Vec3::new(0.0, 0.0, 0.41), UnitQuat::identity());
        let obs = BodyObservation {
            r: target.r_d,
            v: Vec3::zeros(),
            q: target.q_d,
            omega: Vec3::zeros(),
        };
        let grav = crate::robot::gravity_feedforward(&m, &obs.q);
        let w = ctrl
            .compute_body_wrench(&m, &target, &obs, grav, &no_payload(), &Vec3::zeros(), 1e-3)
            .unwrap();
        assert_abs_diff_eq!(
            w.force,
            Vec3::new(0.0, 0.0, m.total_mass * m.gravity),
            epsilon = 1e-12
        );
        // Symmetric default links: gravity moment is zero at identity.
        assert_abs_diff_eq!(w.torque, Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn wrench_equilibrium_matches_link_gravity_moment() {
        // Tilted body: the torque must equal the negated link gravity moment
        // exactly when all errors vanish.
        let m = model();
        let mut gains = GainSet::default();
        gains.ki_f = [0.0; 3];
        gains.ki_t = [0.0; 3];
        let mut ctrl = Controller::new(gains);
        let q = UnitQuat::from_axis_angle(&Vector3::y_axis(), 0.3);
        let target = MotionTarget::hold(Vec3::new(0.0, 0.0, 0.41), q);
        let obs = BodyObservation {
            r: target.r_d,
            v: Vec3::zeros(),
            q,
            omega: Vec3::zeros(),
        };
        let grav = crate::robot::gravity_feedforward(&m, &q);
        let w = ctrl
            .compute_body_wrench(&m, &target, &obs, grav, &no_payload(), &Vec3::zeros(), 1e-3)
            .unwrap();
        assert_abs_diff_eq!(w.torque, -grav.1, epsilon = 1e-12);
    }

    #[test]
    fn wrench_pure_yaw_proportional() {
        let m = model();
        let mut gains = GainSet::default();
        gains.ki_f = [0.0; 3];
        gains.ki_t = [0.0; 3];
        gains.kp_t = [120.0; 3];
        let mut ctrl = Controller::new(gains);
        let target = MotionTarget::hold(
            Vec3::new(0.0, 0.0, 0.41),
            UnitQuat::from_axis_angle(&Vector3::z_axis(), 0.1),
        );
        let obs = BodyObservation {
            r: target.r_d,
            v: Vec3::zeros(),
            q: UnitQuat::identity(),
            omega: Vec3::zeros(),
        };
        // Zero gravity terms isolate the PID.
        let w = ctrl
            .compute_body_wrench(
                &m,
                &target,
                &obs,
                (Vec3::zeros(), Vec3::zeros()),
                &no_payload(),
                &Vec3::zeros(),
                1e-3,
            )
            .unwrap();
        assert_abs_diff_eq!(w.torque, Vec3::new(0.0, 0.0, 12.0), epsilon = 1e-12);
    }

    #[test]
    fn wrench_matches_term_by_term_oracle() {
        let m = model();
        let mut rng = StdRng::seed_from_u64(40);
        for _ in 0..300 {
            let gains = GainSet {
                kp_f: [rng.gen_range(0.0..400.0); 3],
                ki_f: [0.0; 3],
                kd_f: [rng.gen_range(0.0..60.0); 3],
                kp_t: [rng.gen_range(0.0..300.0); 3],
                ki_t: [0.0; 3],
                kd_t: [rng.gen_range(0.0..40.0); 3],
                ..GainSet::default()
            };
            let mut ctrl = Controller::new(gains.clone());
            let target = MotionTarget {
                r_d: Vec3::new(rng.gen(), rng.gen(), 0.4 + rng.gen::<f64>()),
                v_d: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                a_d: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                q_d: UnitQuat::from_scaled_axis(Vec3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                )),
                omega_d: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
            };
            let obs = BodyObservation {
                r: Vec3::new(rng.gen(), rng.gen(), 0.4 + rng.gen::<f64>()),
                v: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                q: UnitQuat::from_scaled_axis(Vec3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                )),
                omega: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
            };
            let payload = PayloadEstimate {
                m_p: rng.gen_range(0.0..75.0),
                d_hat: Vec3::zeros(),
                converged: true,
            };
            let tau_p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let grav = crate::robot::gravity_feedforward(&m, &obs.q);
            let w = ctrl
                .compute_body_wrench(&m, &target, &obs, grav, &payload, &tau_p, 1e-3)
                .unwrap();

            // Independent summation, term by term.
            let e_pos = target.r_d - obs.r;
            let e_ori = orientation_error(&target.q_d, &obs.q).unwrap();
            let mut force = Vec3::zeros();
            for i in 0..3 {
                force[i] += gains.kp_f[i] * e_pos[i];
                force[i] += gains.kd_f[i] * (target.v_d[i] - obs.v[i]);
                force[i] += (m.total_mass + payload.m_p) * target.a_d[i];
            }
            force -= grav.0;
            force -= m.gravity_vec() * payload.m_p;
            let mut torque = Vec3::zeros();
            for i in 0..3 {
                torque[i] += gains.kp_t[i] * e_ori[i];
                torque[i] += gains.kd_t[i] * (target.omega_d[i] - obs.omega[i]);
            }
            torque -= grav.1;
            torque -= tau_p;
            assert_abs_diff_eq!(w.force, force, epsilon = 1e-12);
            assert_abs_diff_eq!(w.torque, torque, epsilon = 1e-12);
        }
    }

    #[test]
    fn integral_accumulates_and_clamps() {
        let m = model();
        let mut ctrl = Controller::new(GainSet::default());
        let target = MotionTarget::hold(Vec3::new(0.0, 0.0, 0.5), UnitQuat::identity());
        let obs = BodyObservation {
            r: Vec3::new(0.0, 0.0, 0.4),
            v: Vec3::zeros(),
            q: UnitQuat::identity(),
            omega: Vec3::zeros(),
        };
        let mut last = Vec3::zeros();
        for _ in 0..100_000 {
            let w = ctrl
                .compute_body_wrench(
                    &m,
                    &target,
                    &obs,
                    (Vec3::zeros(), Vec3::zeros()),
                    &no_payload(),
                    &Vec3::zeros(),
                    1e-3,
                )
                .unwrap();
            last = w.force;
        }
        // P term 30 N plus the clamped integral term 0.3 m g.
        let clamp = 0.3 * m.total_mass * m.gravity;
        assert_abs_diff_eq!(last.z, 300.0 * 0.1 + clamp, epsilon = 1e-9);

        // Disabled integral holds its value.
        ctrl.set_integral_enabled(false);
        let w1 = ctrl
            .compute_body_wrench(
                &m,
                &target,
                &obs,
                (Vec3::zeros(), Vec3::zeros()),
                &no_payload(),
                &Vec3::zeros(),
                1e-3,
            )
            .unwrap();
        assert_abs_diff_eq!(w1.force, last, epsilon = 1e-12);
    }

    #[test]
    fn distribution_dimensions() {
        let m = model();
        let (st, contact) = stand_state(&m, 0.41);
        let wrench = BodyWrench {
            force: Vec3::new(0.0, 0.0, 490.5),
            torque: Vec3::zeros(),
        };
        let gains = GainSet::default();
        let p = assemble_distribution(
            &wrench,
            &contact,
            &m,
            &st,
            &gains,
            &DistributionOptions::default(),
        )
        .unwrap();
        assert_eq!(p.qp.num_vars(), 12);
        assert_eq!(p.qp.a_in.nrows(), 44);

        let mut c2 = contact.clone();
        c2.stance = [true, false, false, true];
        let p = assemble_distribution(&wrench, &c2, &m, &st, &gains, &DistributionOptions::default())
            .unwrap();
        assert_eq!(p.qp.num_vars(), 6);
        assert_eq!(p.stance, vec![0, 3]);

        let mut c3 = contact.clone();
        c3.stance = [false; 4];
        assert!(matches!(
            assemble_distribution(&wrench, &c3, &m, &st, &gains, &DistributionOptions::default()),
            Err(RobotError::NoStanceFeet)
        ));
    }

    #[test]
    fn pyramid_rows_match_hand_construction() {
        let m = model();
        let (st, mut contact) = stand_state(&m, 0.41);
        contact.stance = [true, false, false, false];
        let wrench = BodyWrench {
            force: Vec3::zeros(),
            torque: Vec3::zeros(),
        };
        let p = assemble_distribution(
            &wrench,
            &contact,
            &m,
            &st,
            &GainSet::default(),
            &DistributionOptions {
                torque_rows: false,
                ..Default::default()
            },
        )
        .unwrap();
        let mu = 0.6;
        let expect = [
            [1.0, 0.0, -mu],
            [-1.0, 0.0, -mu],
            [0.0, 1.0, -mu],
            [0.0, -1.0, -mu],
            [0.0, 0.0, -1.0],
        ];
        assert_eq!(p.qp.a_in.nrows(), 5);
        for r in 0..5 {
            for c in 0..3 {
                assert_abs_diff_eq!(p.qp.a_in[(r, c)], expect[r][c], epsilon = 0.0);
            }
            assert_eq!(p.qp.b_in[r], 0.0);
        }
    }

    #[test]
    fn symmetric_stand_quarter_weight_each() {
        let m = model();
        let (st, contact) = stand_state(&m, 0.41);
        let w_tot = m.total_mass * m.gravity;
        let wrench = BodyWrench {
            force: Vec3::new(0.0, 0.0, w_tot),
            torque: Vec3::zeros(),
        };
        // Vanishing regularization makes the quarter-weight split exact.
        let gains = GainSet {
            r_reg: 1e-9,
            ..GainSet::default()
        };
        let mut solver = QpSolver::new();
        let (forces, sol, level) =
            distribute_with_fallback(&mut solver, &wrench, &contact, &m, &st, &gains).unwrap();
        assert_eq!(level, FallbackLevel::None);
        assert_eq!(sol.status, QpStatus::Optimal);
        for leg in 0..4 {
            assert_abs_diff_eq!(forces[leg].z, w_tot / 4.0, epsilon = 1e-5);
            assert_abs_diff_eq!(forces[leg].x, 0.0, epsilon = 1e-8);
            assert_abs_diff_eq!(forces[leg].y, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn small_r_matches_pseudo_inverse() {
        let m = model();
        let (st, contact) = stand_state(&m, 0.41);
        let wrench = BodyWrench {
            force: Vec3::new(20.0, -10.0, 500.0),
            torque: Vec3::new(5.0, 8.0, -3.0),
        };
        for (r_reg, tol) in [(1e-3, 0.5), (1e-6, 1e-3), (1e-9, 1e-4)] {
            let gains = GainSet {
                r_reg,
                ..GainSet::default()
            };
            let p = assemble_distribution(
                &wrench,
                &contact,
                &m,
                &st,
                &gains,
                &DistributionOptions::default(),
            )
            .unwrap();
            let mut solver = QpSolver::new();
            let (forces, sol) = distribute_contact_forces(&mut solver, &p);
            assert_eq!(sol.status, QpStatus::Optimal);
            assert!(sol.active_set.is_empty(), "no constraints should bind");

            // Weighted pseudo-inverse oracle: minimize (AF-B)'Q(AF-B) alone.
            let mut a = DMatrix::zeros(6, 12);
            for (j, &leg) in p.stance.iter().enumerate() {
                let r_bc = contact.foot_world[leg] - st.r_b;
                a.view_mut((0, 3 * j), (3, 3)).copy_from(&Matrix3::identity());
                a.view_mut((3, 3 * j), (3, 3)).copy_from(&skew(&r_bc));
            }
            let q = DMatrix::from_diagonal(&DVector::from_row_slice(&gains.q_weight));
            let mut b = DVector::zeros(6);
            b.fixed_rows_mut::<3>(0).copy_from(&wrench.force);
            b.fixed_rows_mut::<3>(3).copy_from(&wrench.torque);
            let aqa = a.transpose() * &q * &a;
            // A has a null space (12 vars, 6 rows); take the min-norm
            // solution via SVD pseudo-inverse, which is what R -> 0 selects.
            let x = aqa
                .svd(true, true)
                .solve(&(a.transpose() * &q * &b), 1e-10)
                .unwrap();
            for (j, &leg) in p.stance.iter().enumerate() {
                let oracle = Vec3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
                assert_abs_diff_eq!(forces[leg], oracle, epsilon = tol);
            }
            if r_reg <= 1e-9 {
                // The wrench is reproduced essentially exactly as R -> 0.
                let residual = (&a * &sol.x - &b).amax();
                assert!(residual <= 1e-6, "wrench residual {residual}");
            }
        }
    }

    #[test]
    fn lateral_wrench_saturates_pyramid() {
        let m = model();
        let (st, contact) = stand_state(&m, 0.41);
        // Large lateral force relative to weight forces the pyramid faces.
        let wrench = BodyWrench {
            force: Vec3::new(400.0, 0.0, 490.5),
            torque: Vec3::zeros(),
        };
        let p = assemble_distribution(
            &wrench,
            &contact,
            &m,
            &st,
            &GainSet::default(),
            &DistributionOptions {
                torque_rows: false,
                ..Default::default()
            },
        )
        .unwrap();
        let mut solver = QpSolver::new();
        let (forces, sol) = distribute_contact_forces(&mut solver, &p);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.kkt_residual <= 1e-8);
        assert!(!sol.active_set.is_empty());
        // Every foot rides its F_x = mu F_z face.
        for leg in 0..4 {
            assert_abs_diff_eq!(forces[leg].x, m.friction * forces[leg].z, epsilon = 1e-6);
        }
    }

    #[test]
    fn qr_common_scaling_invariance() {
        let m = model();
        let (st, contact) = stand_state(&m, 0.41);
        let wrench = BodyWrench {
            force: Vec3::new(30.0, 20.0, 520.0),
            torque: Vec3::new(4.0, -6.0, 2.0),
        };
        let base = GainSet::default();
        let scaled = GainSet {
            q_weight: base.q_weight.map(|q| q * 7.5),
            r_reg: base.r_reg * 7.5,
            ..base.clone()
        };
        let solve = |gains: &GainSet| {
            let p = assemble_distribution(
                &wrench,
                &contact,
                &m,
                &st,
                gains,
                &DistributionOptions::default(),
            )
            .unwrap();
            let mut solver = QpSolver::new();
            distribute_contact_forces(&mut solver, &p).0
        };
        let f1 = solve(&base);
        let f2 = solve(&scaled);
        for leg in 0..4 {
            assert_abs_diff_eq!(f1[leg], f2[leg], epsilon = 1e-9);
        }
    }

    #[test]
    fn torques_round_trip_and_limits() {
        let m = model();
        let (mut st, contact) = stand_state(&m, 0.41);
        let wrench = BodyWrench {
            force: Vec3::new(25.0, -15.0, 520.0),
            torque: Vec3::new(3.0, 6.0, -2.0),
        };
        let mut solver = QpSolver::new();
        let (forces, sol, _) =
            distribute_with_fallback(&mut solver, &wrench, &contact, &m, &st, &GainSet::default())
                .unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let tau = joint_torques_from_forces(&m, &st, &contact, &forces).unwrap();
        for leg in 0..4 {
            for j in 0..3 {
                assert!(tau[3 * leg + j] >= m.tau_min[j] - 1e-8);
                assert!(tau[3 * leg + j] <= m.tau_max[j] + 1e-8);
            }
        }
        st.joint_tau = tau;
        let recovered = crate::robot::contact_forces_from_torques(&m, &st, &contact).unwrap();
        for leg in 0..4 {
            assert_abs_diff_eq!(recovered[leg], forces[leg], epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_force_zero_torque_and_swing_zero() {
        let m = model();
        let (st, mut contact) = stand_state(&m, 0.41);
        contact.stance = [true, false, false, true];
        let forces = [Vec3::zeros(); 4];
        let tau = joint_torques_from_forces(&m, &st, &contact, &forces).unwrap();
        assert_eq!(tau, [0.0; 12]);

        let wrench = BodyWrench {
            force: Vec3::new(0.0, 0.0, 490.5),
            torque: Vec3::zeros(),
        };
        let mut solver = QpSolver::new();
        let (forces, sol, _) =
            distribute_with_fallback(&mut solver, &wrench, &contact, &m, &st, &GainSet::default())
                .unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(forces[1], Vec3::zeros());
        assert_eq!(forces[2], Vec3::zeros());
    }
}
