//! Scenario runner: closes the estimator / wrench PID / distribution QP
//! loop around the rigid-body step, with leg-odometry feedback, optional
//! force noise and sensor latency, and deterministic CSV logging.

use super::config::{GaitKind, InitMode, Scenario};
use super::dynamics::{payload_moment_true, step_dynamics, SimError};
use super::gait::{quintic, GaitSchedule};
use super::summary::{summarize_run, Summary};
use crate::control::{
    distribute_with_fallback_opts, joint_torques_from_forces, BodyObservation, BodyWrench,
    Controller, DistributionOptions, FallbackLevel, MotionTarget,
};
use crate::estimator::{
    beta_fn, estimate_payload_mass, estimated_payload_moment, lyapunov_value, tracking_error_s,
    update_law_step, ConvergenceDetector, DynamicsContext, EstimatorState, PayloadEstimate,
};
use crate::qp::{QpSolver, QpStatus};
use crate::robot::{
    body_odometry, foot_jacobian, gravity_feedforward, inverse_kinematics, ContactState,
    RobotError, RobotModel, RobotState, NUM_JOINTS, NUM_LEGS,
};
use crate::so3::{canonical, orientation_error, UnitQuat, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

/// One logged tick.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub t: f64,
    pub r_b: Vec3,
    pub v_b: Vec3,
    pub q_b: UnitQuat,
    pub omega_b: Vec3,
    pub m_hat: f64,
    pub m_hat_raw: f64,
    pub d_hat: Vec3,
    pub d_hat_dot: Vec3,
    pub tau_p_hat: Vec3,
    pub e_r: Vec3,
    pub e_q: Vec3,
    pub s: Vec3,
    pub x_tilde_norm: f64,
    pub v_lyap: f64,
    pub z_diag: Vec3,
    pub forces: [Vec3; NUM_LEGS],
    pub tau: [f64; NUM_JOINTS],
    pub converged: bool,
    pub qp_status: QpStatus,
    pub fallback: FallbackLevel,
    pub stance: [bool; NUM_LEGS],
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub scenario: Scenario,
    pub rows: Vec<RunRow>,
    /// Start of the sustained window that latched convergence.
    pub convergence_time: Option<f64>,
    /// Tick time at which the estimates were frozen (the latch itself).
    pub freeze_time: Option<f64>,
    pub trot_start: Option<f64>,
    pub final_estimate: PayloadEstimate,
    /// Ground-truth payload gravity moment at the target attitude (N m).
    pub tau_p_nominal: Vec3,
    pub fallback_events: usize,
}

impl RunLog {
    pub fn dt(&self) -> f64 {
        self.scenario.sim.dt
    }

    /// Full per-tick log.
    pub fn write_run_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "t,r_bx,r_by,r_bz,v_bx,v_by,v_bz,q_bw,q_bx,q_by,q_bz,omega_bx,omega_by,omega_bz,\
             m_hat,d_hat_x,d_hat_y,d_hat_z,tau_p_hat_x,tau_p_hat_y,tau_p_hat_z,e_r_norm,e_q_norm,V,\
             f1x,f1y,f1z,f2x,f2y,f2z,f3x,f3y,f3z,f4x,f4y,f4z,\
             tau1,tau2,tau3,tau4,tau5,tau6,tau7,tau8,tau9,tau10,tau11,tau12,converged,qp_status"
        )?;
        for r in &self.rows {
            let q = r.q_b.as_ref().coords;
            write!(w, "{}", fmt(r.t))?;
            for v in [&r.r_b, &r.v_b] {
                write!(w, ",{},{},{}", fmt(v.x), fmt(v.y), fmt(v.z))?;
            }
            write!(w, ",{},{},{},{}", fmt(q.w), fmt(q.x), fmt(q.y), fmt(q.z))?;
            for v in [&r.omega_b] {
                write!(w, ",{},{},{}", fmt(v.x), fmt(v.y), fmt(v.z))?;
            }
            write!(w, ",{}", fmt(r.m_hat))?;
            for v in [&r.d_hat, &r.tau_p_hat] {
                write!(w, ",{},{},{}", fmt(v.x), fmt(v.y), fmt(v.z))?;
            }
            write!(
                w,
                ",{},{},{}",
                fmt(r.e_r.norm()),
                fmt(r.e_q.norm()),
                fmt(r.v_lyap)
            )?;
            for f in &r.forces {
                write!(w, ",{},{},{}", fmt(f.x), fmt(f.y), fmt(f.z))?;
            }
            for tq in &r.tau {
                write!(w, ",{}", fmt(*tq))?;
            }
            writeln!(w, ",{},{}", u8::from(r.converged), r.qp_status)?;
        }
        Ok(())
    }

    /// Estimator-focused trace.
    pub fn write_estimator_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "t,m_hat,d_hat_x,d_hat_y,d_hat_z,d_hat_dot_x,d_hat_dot_y,d_hat_dot_z,\
             x_tilde_norm,s_norm,V,converged"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt(r.t),
                fmt(r.m_hat),
                fmt(r.d_hat.x),
                fmt(r.d_hat.y),
                fmt(r.d_hat.z),
                fmt(r.d_hat_dot.x),
                fmt(r.d_hat_dot.y),
                fmt(r.d_hat_dot.z),
                fmt(r.x_tilde_norm),
                fmt(r.s.norm()),
                fmt(r.v_lyap),
                u8::from(r.converged)
            )?;
        }
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

/// Initial attitude offset (rotation vector applied on the left of the
/// target) and initial angular rate, per the scenario's init mode.
///
/// `SlowMode` places the state on the slow eigenvector of the per-axis
/// linearized identification loop, so the recovery is a single decaying
/// exponential. `StaticTilt` balances the payload moment against the
/// proportional term only. Both solve the small fixed point introduced by
/// the attitude dependence of the payload moment.
fn initial_offset(scn: &Scenario, model: &RobotModel) -> (Vec3, Vec3) {
    if scn.init.mode == InitMode::Upright || scn.payload.mass == 0.0 {
        return (Vec3::zeros(), Vec3::zeros());
    }
    let q_t = scn.target.quat();
    let mut delta = Vec3::zeros();
    for _ in 0..100 {
        let q = canonical(&(UnitQuat::from_scaled_axis(delta) * q_t));
        let tau_p = payload_moment_true(model, &scn.payload, &q);
        let mut nd = Vec3::zeros();
        for i in 0..3 {
            let inertia = model.torso_inertia[(i, i)];
            let d_i = tau_p[i] / inertia;
            nd[i] = match scn.init.mode {
                InitMode::StaticTilt => tau_p[i] / scn.gains.kp_t[i],
                InitMode::SlowMode => {
                    let a = scn.gains.kp_t[i] / inertia;
                    let b = scn.gains.kd_t[i] / inertia;
                    let mg = scn.estimator.m_gain[i];
                    // slow-mode shape: x2 = -mg x1, d-residual = (mg^2 - b mg + a) x1
                    d_i / (mg * mg - b * mg + a)
                }
                InitMode::Upright => unreachable!(),
            };
        }
        delta = nd;
    }
    let omega0 = match scn.init.mode {
        InitMode::SlowMode => -Vec3::from(scn.estimator.m_gain).component_mul(&delta),
        _ => Vec3::zeros(),
    };
    (delta, omega0)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    loop {
        let u1: f64 = rng.gen();
        if u1 > 1e-300 {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

fn perturb_forces(
    forces: &mut [Vec3; NUM_LEGS],
    stance: &[bool; NUM_LEGS],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) {
    if sigma <= 0.0 {
        return;
    }
    for leg in 0..NUM_LEGS {
        if stance[leg] {
            for k in 0..3 {
                forces[leg][k] *= 1.0 + sigma * normal(rng);
            }
        }
    }
}

pub fn run_scenario(scn: &Scenario, model: &RobotModel) -> Result<RunLog, SimError> {
    run_scenario_with(scn, model, None)
}

pub fn run_scenario_with(
    scn: &Scenario,
    model: &RobotModel,
    dump_qp: Option<&Path>,
) -> Result<RunLog, SimError> {
    let dt = scn.sim.dt;
    let n_ticks = (scn.sim.duration / dt).round().max(1.0) as usize;
    let mut est_gains = scn.estimator.clone();
    est_gains.dt = dt;
    let gains = scn.gains.clone();
    gains.validate()?;
    let q_t = scn.target.quat();
    let r_t = Vec3::new(0.0, 0.0, scn.target.height);
    let sigma = scn.sim.force_noise_rel;
    let latency = scn.sim.sensor_latency_ticks;

    // --- initial state -------------------------------------------------
    let (delta, omega0) = initial_offset(scn, model);
    let q0 = canonical(&(UnitQuat::from_scaled_axis(delta) * q_t));
    let mut state = RobotState::at_rest(r_t, q0);
    state.omega_b = omega0;

    let rot0 = q0.to_rotation_matrix().into_inner();
    let mut anchors = [Vec3::zeros(); NUM_LEGS];
    let mut contact = ContactState {
        stance: [true; NUM_LEGS],
        foot_body: [Vec3::zeros(); NUM_LEGS],
        foot_world: [Vec3::zeros(); NUM_LEGS],
    };
    for leg in 0..NUM_LEGS {
        let hip_w = r_t + rot0 * model.hip_mounts[leg];
        let off = scn.init.anchor_offsets[leg];
        anchors[leg] = Vec3::new(hip_w.x + off[0], hip_w.y + off[1], 0.0);
        contact.foot_world[leg] = anchors[leg];
        contact.foot_body[leg] = rot0.transpose() * (anchors[leg] - r_t);
        let q = inverse_kinematics(model, &contact.foot_body[leg], leg)?;
        state.set_leg_q(leg, q);
    }

    let mut controller = Controller::new(gains.clone());
    controller.set_integral_enabled(false);
    let mut solver = QpSolver::new();
    let base_opts = DistributionOptions {
        torque_rows: true,
        wrench_torque_scale: 1.0,
        weight_equality: true,
    };

    // the feet already carry the full weight before the controller starts:
    // static distribution of gravity at the initial attitude
    let grav0 = gravity_feedforward(model, &q0);
    let wrench0 = BodyWrench {
        force: -grav0.0 - model.gravity_vec() * scn.payload.mass,
        torque: -grav0.1 - payload_moment_true(model, &scn.payload, &q0),
    };
    let (static_forces, sol0, _) =
        distribute_with_fallback_opts(&mut solver, &wrench0, &contact, model, &state, &gains, &base_opts)?;
    if sol0.status != QpStatus::Optimal {
        return Err(SimError::Distribution {
            t: 0.0,
            status: sol0.status.to_string(),
        });
    }
    state.joint_tau = joint_torques_from_forces(model, &state, &contact, &static_forces)?;

    // the estimator has been watching the force sensors while standing:
    // prime the mass window with pre-start samples
    let mut rng = ChaCha8Rng::seed_from_u64(scn.sim.seed);
    let mut est = EstimatorState::new();
    for _ in 0..est_gains.mass_window.max(1) {
        let mut fs = static_forces;
        perturb_forces(&mut fs, &contact.stance, sigma, &mut rng);
        let raw = estimate_payload_mass(model, &fs, &contact.stance, &Vec3::zeros())?;
        est.push_mass_sample(raw, &est_gains);
    }

    let mut force_buf: VecDeque<[Vec3; NUM_LEGS]> =
        std::iter::repeat(static_forces).take(latency + 1).collect();

    let gait_sched = GaitSchedule::new(scn.trot.phase_duration, scn.trot.apex_height);
    let mut conv = ConvergenceDetector::new();
    let mut trot_start: Option<f64> = None;
    let mut freeze_time: Option<f64> = None;
    let mut v_hat_prev: Option<Vec3> = None;
    // trot foothold state: ground shift toward the estimated combined CoM,
    // the current phase, and liftoff spots for the swinging pair
    let mut foothold_shift = Vec3::zeros();
    let mut lean_start: Option<f64> = None;
    let mut lean_done = scn.gait != GaitKind::TrotInPlace;
    const LEAN_DURATION: f64 = 1.5;
    let mut prev_phase: Option<usize> = None;
    let mut liftoff = anchors;
    let k_capture = (scn.target.height / model.gravity).sqrt();
    let mut acc_window: VecDeque<Vec3> = VecDeque::new();
    let mut prev_joint_q = state.joint_q;
    let mut fallback_events = 0usize;
    let mut rows: Vec<RunRow> = Vec::with_capacity(n_ticks);
    let mut target = MotionTarget::hold(r_t, q_t);

    for i in 0..n_ticks {
        let t = i as f64 * dt;

        if scn.gait == GaitKind::TrotInPlace
            && trot_start.is_none()
            && t + 1e-12 >= scn.trot.identify_duration
            && conv.converged()
            && lean_done
        {
            trot_start = Some(t);
        }

        // --- contact and joint sensors ---------------------------------
        let rot = state.q_b.to_rotation_matrix().into_inner();
        let mut swing = [false; NUM_LEGS];
        let mut swing_h = 0.0;
        let mut swing_u = 0.0;
        let mut planned = anchors;
        if let Some(ts) = trot_start {
            let tt = t - ts;
            for leg in gait_sched.swing_pair(tt) {
                swing[leg] = true;
            }
            swing_h = gait_sched.swing_height(tt);
            swing_u = gait_sched.phase_progress(tt);
            // Capture-point foothold targets: under the hip, shifted to the
            // estimated CoM, plus one pendulum time constant of velocity.
            // Rotation about the diagonal support line is unactuated by two
            // point feet, so placement is what damps the rocking mode.
            let v_guess = v_hat_prev.unwrap_or_else(Vec3::zeros);
            for (leg, p) in planned.iter_mut().enumerate() {
                let hip_w = state.r_b + rot * model.hip_mounts[leg];
                *p = Vec3::new(
                    hip_w.x + foothold_shift.x + k_capture * v_guess.x,
                    hip_w.y + foothold_shift.y + k_capture * v_guess.y,
                    0.0,
                );
            }
            let phase = gait_sched.phase_index(tt);
            if prev_phase != Some(phase) {
                if prev_phase.is_some() {
                    // the pair entering stance lands on its planned foothold
                    for leg in 0..NUM_LEGS {
                        if !swing[leg] {
                            anchors[leg] = planned[leg];
                        }
                    }
                }
                for leg in gait_sched.swing_pair(tt) {
                    liftoff[leg] = anchors[leg];
                }
                prev_phase = Some(phase);
            }
        }
        for leg in 0..NUM_LEGS {
            contact.stance[leg] = !swing[leg];
            contact.foot_world[leg] = if swing[leg] {
                let blend = quintic(swing_u);
                let a = liftoff[leg];
                let b = planned[leg];
                Vec3::new(
                    a.x + blend * (b.x - a.x),
                    a.y + blend * (b.y - a.y),
                    swing_h,
                )
            } else {
                anchors[leg]
            };
            contact.foot_body[leg] = rot.transpose() * (contact.foot_world[leg] - state.r_b);
            let q = inverse_kinematics(model, &contact.foot_body[leg], leg)?;
            state.set_leg_q(leg, q);
            if contact.stance[leg] {
                // stance joint rates consistent with the body twist
                let j = foot_jacobian(model, leg, &q)?;
                let lever = contact.foot_world[leg] - state.r_b;
                let v_foot_body =
                    -(rot.transpose() * (state.v_b + state.omega_b.cross(&lever)));
                let qd = j
                    .lu()
                    .solve(&v_foot_body)
                    .ok_or(RobotError::SingularConfiguration { leg })?;
                state.set_leg_qd(leg, [qd.x, qd.y, qd.z]);
            } else {
                let qd = [
                    (q[0] - prev_joint_q[3 * leg]) / dt,
                    (q[1] - prev_joint_q[3 * leg + 1]) / dt,
                    (q[2] - prev_joint_q[3 * leg + 2]) / dt,
                ];
                state.set_leg_qd(leg, qd);
            }
        }
        prev_joint_q = state.joint_q;

        let measured = *force_buf.front().expect("latency buffer is never empty");

        // --- odometry ---------------------------------------------------
        let (r_hat, v_raw) = body_odometry(model, &state.joint_q, &state.joint_qd, &contact, &state.q_b)?;
        let n_st = contact.stance_count() as f64;
        let mut a_bar = Vec3::zeros();
        for leg in contact.stance_legs() {
            a_bar += contact.foot_world[leg];
        }
        a_bar /= n_st;
        // remove the angular-rate lever term: each chain reports the foot
        // velocity, not the torso velocity
        let v_hat = v_raw - state.omega_b.cross(&(a_bar - r_hat));
        if let Some(vp) = v_hat_prev {
            acc_window.push_back((v_hat - vp) / dt);
            while acc_window.len() > 10 {
                acc_window.pop_front();
            }
        }
        v_hat_prev = Some(v_hat);
        let a_meas = if acc_window.is_empty() {
            Vec3::zeros()
        } else {
            acc_window.iter().sum::<Vec3>() / acc_window.len() as f64
        };

        // --- estimation -------------------------------------------------
        let all_stance = contact.stance.iter().all(|&s| s);
        if all_stance && !est.converged {
            let raw = estimate_payload_mass(model, &measured, &contact.stance, &a_meas)?;
            est.push_mass_sample(raw, &est_gains);
        }

        let e_q = orientation_error(&q_t, &state.q_b)?;
        if trot_start.is_none() && !est.converged && conv.update(e_q.amax(), t, &est_gains) {
            // identification complete: hold the estimates
            est.converged = true;
            est.d_hat_dot = Vec3::zeros();
            freeze_time = Some(t);
            if scn.gait == GaitKind::TrotInPlace {
                // Lean the torso so the combined CoM sits over the nominal
                // footprint before trotting: tau_p = (R r_p) x m_p g_vec
                // gives the ground offset of the CoM directly. Diagonal
                // two-leg stance cannot exert torque about its support
                // line, so a CoM off the line falls; centering it removes
                // the forcing, and the trot feet return to their nominal
                // anchors instead of chasing the lean.
                let tau = estimated_payload_moment(&est, model);
                let w_tot = (model.total_mass + est.m_hat) * model.gravity;
                foothold_shift = Vec3::new(tau.y / w_tot, -tau.x / w_tot, 0.0);
                lean_start = Some(t);
            }
        }

        // the lean is a fully fed-forward quintic glide; a step target would
        // ring for seconds at these gains
        if let Some(t0) = lean_start {
            let u = ((t - t0) / LEAN_DURATION).clamp(0.0, 1.0);
            if u >= 1.0 {
                target = MotionTarget::hold(r_t - foothold_shift, q_t);
                lean_start = None;
                lean_done = true;
            } else {
                let p = quintic(u);
                let dp = 30.0 * u * u * (u - 1.0) * (u - 1.0) / LEAN_DURATION;
                let ddp = (60.0 * u * (2.0 * u - 1.0) * (u - 1.0)) / (LEAN_DURATION * LEAN_DURATION);
                target = MotionTarget {
                    r_d: r_t - foothold_shift * p,
                    v_d: -foothold_shift * dp,
                    a_d: -foothold_shift * ddp,
                    q_d: q_t,
                    omega_d: Vec3::zeros(),
                };
            }
        }

        let e_pos = target.r_d - r_hat;
        let grav = gravity_feedforward(model, &state.q_b);
        let ctx = DynamicsContext::from_attitude(model, &state.q_b, &q_t, &state.omega_b, &grav.1)?;
        let s = tracking_error_s(&ctx, &est_gains);
        est.s = s;
        let v_lyap = lyapunov_value(&s);
        let d_true = ctx.b_dyn * payload_moment_true(model, &scn.payload, &state.q_b);
        est.z_diag = est.d_hat - d_true + beta_fn(&state.omega_b, &est_gains);

        // --- control ----------------------------------------------------
        let obs = BodyObservation {
            r: r_hat,
            v: v_hat,
            q: state.q_b,
            omega: state.omega_b,
        };
        let payload_est = est.snapshot();
        let tau_p_hat = estimated_payload_moment(&est, model);
        let wrench =
            controller.compute_body_wrench(model, &target, &obs, grav, &payload_est, &tau_p_hat, dt)?;
        // the weight-support equality only makes sense with a full support
        // polygon; in two-leg stance it would amplify the unachievable
        // wrench component
        let tick_opts = DistributionOptions {
            weight_equality: all_stance,
            ..base_opts
        };
        let (cmd, sol, level) = distribute_with_fallback_opts(
            &mut solver,
            &wrench,
            &contact,
            model,
            &state,
            &gains,
            &tick_opts,
        )?;
        if level != FallbackLevel::None {
            fallback_events += 1;
        }
        if sol.status != QpStatus::Optimal {
            return Err(SimError::Distribution {
                t,
                status: sol.status.to_string(),
            });
        }
        if i == 0 {
            if let Some(path) = dump_qp {
                dump_first_qp(path, &wrench, &contact, model, &state, &gains, &base_opts)?;
            }
        }

        let mut applied = cmd;
        perturb_forces(&mut applied, &contact.stance, sigma, &mut rng);

        // update law driven by the realized aggregate foot moment
        if all_stance && !est.converged {
            let mut u_meas = Vec3::zeros();
            for leg in contact.stance_legs() {
                u_meas += (contact.foot_world[leg] - r_hat).cross(&applied[leg]);
            }
            update_law_step(&ctx, &mut est, &u_meas, &est_gains);
        }

        let tau = joint_torques_from_forces(model, &state, &contact, &applied)?;
        state.joint_tau = tau;

        rows.push(RunRow {
            t,
            r_b: state.r_b,
            v_b: state.v_b,
            q_b: state.q_b,
            omega_b: state.omega_b,
            m_hat: est.m_hat,
            m_hat_raw: est.m_hat_raw,
            d_hat: est.d_hat,
            d_hat_dot: est.d_hat_dot,
            tau_p_hat,
            e_r: e_pos,
            e_q,
            s,
            x_tilde_norm: ctx.x_tilde.norm(),
            v_lyap,
            z_diag: est.z_diag,
            forces: applied,
            tau,
            converged: est.converged,
            qp_status: sol.status,
            fallback: level,
            stance: contact.stance,
        });

        step_dynamics(model, &scn.payload, &mut state, &contact, &applied, t, dt)?;
        force_buf.push_back(applied);
        while force_buf.len() > latency + 1 {
            force_buf.pop_front();
        }
    }

    Ok(RunLog {
        scenario: scn.clone(),
        rows,
        convergence_time: conv.convergence_time(&est_gains),
        freeze_time,
        trot_start,
        final_estimate: est.snapshot(),
        tau_p_nominal: payload_moment_true(model, &scn.payload, &q_t),
        fallback_events,
    })
}

/// Run and write `run.csv`, `estimator.csv`, `summary.csv` and
/// `summary.txt` into `out_dir`.
pub fn run_scenario_to_dir(
    scn: &Scenario,
    model: &RobotModel,
    out_dir: &Path,
    dump_qp: bool,
) -> Result<(RunLog, Summary), SimError> {
    std::fs::create_dir_all(out_dir)?;
    let dump = dump_qp.then(|| out_dir.join("qp_dump.txt"));
    let log = run_scenario_with(scn, model, dump.as_deref())?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("run.csv"))?);
    log.write_run_csv(&mut f)?;
    f.flush()?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("estimator.csv"))?);
    log.write_estimator_csv(&mut f)?;
    f.flush()?;
    let summary = summarize_run(&log);
    std::fs::write(out_dir.join("summary.csv"), summary.to_csv())?;
    std::fs::write(out_dir.join("summary.txt"), summary.to_text())?;
    Ok((log, summary))
}

#[allow(clippy::too_many_arguments)]
fn dump_first_qp(
    path: &Path,
    wrench: &BodyWrench,
    contact: &ContactState,
    model: &RobotModel,
    state: &RobotState,
    gains: &crate::control::GainSet,
    opts: &DistributionOptions,
) -> Result<(), SimError> {
    let prob = crate::control::assemble_distribution(wrench, contact, model, state, gains, opts)?;
    let mut out = String::new();
    use std::fmt::Write as _;
    let qp = &prob.qp;
    let _ = writeln!(
        out,
        "n = {}, m_in = {}, m_eq = {}",
        qp.h.nrows(),
        qp.a_in.nrows(),
        qp.a_eq.nrows()
    );
    for (name, mat) in [("H", &qp.h), ("A_in", &qp.a_in), ("A_eq", &qp.a_eq)] {
        let _ = writeln!(out, "{name} =");
        for r in 0..mat.nrows() {
            let row: Vec<String> = (0..mat.ncols()).map(|c| format!("{:.6e}", mat[(r, c)])).collect();
            let _ = writeln!(out, "  {}", row.join(" "));
        }
    }
    for (name, v) in [("f", &qp.f), ("b_in", &qp.b_in), ("b_eq", &qp.b_eq)] {
        let row: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
        let _ = writeln!(out, "{name} = {}", row.join(" "));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn noiseless_stand_mass_is_exact_and_v_decays() {
        let mut scn = Scenario::builtin_stand("unit_stand", 35.0, [0.03, 0.0, 0.0]);
        scn.sim.duration = 0.6;
        let model = RobotModel::kirin_default();
        let log = run_scenario(&scn, &model).unwrap();
        let last = log.rows.last().unwrap();
        assert!(
            (last.m_hat - 35.0).abs() < 1e-6,
            "mass error {:.3e}",
            (last.m_hat - 35.0).abs()
        );
        assert!(last.v_lyap < log.rows[0].v_lyap);
        // vertical channel stays pinned
        assert_abs_diff_eq!(last.r_b.z, 0.40, epsilon = 1e-6);
        assert!(log.fallback_events == 0);
    }

    #[test]
    fn same_seed_reproduces_csv_bytes() {
        let mut scn = Scenario::builtin_stand("unit_det", 20.0, [0.02, 0.01, 0.0]);
        scn.sim.duration = 0.3;
        scn.sim.force_noise_rel = 0.02;
        scn.sim.seed = 42;
        let model = RobotModel::kirin_default();
        let mut a = Vec::new();
        run_scenario(&scn, &model).unwrap().write_run_csv(&mut a).unwrap();
        let mut b = Vec::new();
        run_scenario(&scn, &model).unwrap().write_run_csv(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_trot_keeps_swing_forces_zero() {
        let mut scn = Scenario::builtin_stand("unit_trot", 10.0, [0.02, 0.0, 0.0]);
        scn.gait = GaitKind::TrotInPlace;
        scn.trot.identify_duration = 0.6;
        scn.sim.duration = 3.5;
        let model = RobotModel::kirin_default();
        let log = run_scenario(&scn, &model).unwrap();
        // trot waits for convergence plus the CoM lean-in
        let ts = log.trot_start.expect("trot must start");
        assert!(ts <= 2.2, "trot start {ts}");
        let mut saw_swing = false;
        for row in &log.rows {
            for leg in 0..NUM_LEGS {
                if !row.stance[leg] {
                    saw_swing = true;
                    assert_abs_diff_eq!(row.forces[leg], Vec3::zeros(), epsilon = 0.0);
                }
            }
        }
        assert!(saw_swing);
        let last = log.rows.last().unwrap();
        assert!(last.e_r.norm() < 0.05, "position error {}", last.e_r.norm());
        assert!(last.e_q.norm() < 0.1, "orientation error {}", last.e_q.norm());
    }

    #[test]
    fn latency_delays_measured_forces_without_breaking_convergence() {
        let mut scn = Scenario::builtin_stand("unit_latency", 30.0, [0.03, 0.0, 0.0]);
        scn.sim.duration = 3.0;
        scn.sim.sensor_latency_ticks = 5;
        let model = RobotModel::kirin_default();
        let log = run_scenario(&scn, &model).unwrap();
        assert!(log.convergence_time.is_some());
        assert!((log.final_estimate.m_p - 30.0).abs() < 1e-3);
    }
}
