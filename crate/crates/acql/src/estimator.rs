//! Online payload identification: analytic mass estimate, the
//! invariant-manifold update law for the gravity-moment disturbance, the
//! moment control law, convergence detection and Lyapunov diagnostics.
//!
//! State-space convention: x1 is the body orientation as a rotation vector,
//! x2 the world angular velocity. The rotational dynamics are
//! x2' = B u + d + k with B the inverse inertia, u the aggregate foot-force
//! moment, d the inertia-normalized payload gravity moment and k the
//! inertia-normalized link gravity moment. d, k and the update-law signals
//! all live in angular-acceleration units; multiplying by the inertia
//! recovers newton-meters.

use crate::robot::{RobotModel, NUM_LEGS};
use crate::so3::{Mat3, UnitQuat, Vec3};
use serde::Deserialize;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EstimatorError {
    #[error("mass estimation requires all four feet in stance")]
    NotInStance,
}

/// Gains of the update/control laws plus convergence thresholds.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct EstimatorGains {
    /// Diagonal of c (control-law damping on s), all > 0.
    pub c: [f64; 3],
    /// Diagonal of lambda (tracking-error mixing), all > 0.
    pub lambda: [f64; 3],
    /// Diagonal of the update-law gain matrix (k1, k2, k3), all > 0.
    pub m_gain: [f64; 3],
    /// Per-axis orientation convergence threshold (rad).
    pub e_threshold: f64,
    /// How long the error must stay below threshold (s).
    pub sustain_time: f64,
    /// Integration step (s).
    pub dt: f64,
    /// Moving-average window for the published mass estimate (ticks).
    pub mass_window: usize,
}

impl Default for EstimatorGains {
    fn default() -> Self {
        Self {
            c: [0.7; 3],
            lambda: [0.7; 3],
            m_gain: [1.3; 3],
            e_threshold: 0.01,
            sustain_time: 0.2,
            dt: 1e-3,
            mass_window: 200,
        }
    }
}

impl EstimatorGains {
    pub fn c_vec(&self) -> Vec3 {
        Vec3::from(self.c)
    }
    pub fn lambda_vec(&self) -> Vec3 {
        Vec3::from(self.lambda)
    }
    pub fn m_vec(&self) -> Vec3 {
        Vec3::from(self.m_gain)
    }
}

/// Quantities the estimator reads from the rest of the system each tick.
#[derive(Debug, Clone)]
pub struct DynamicsContext {
    /// Inverse torso inertia (B in the state-space form).
    pub b_dyn: Mat3,
    /// Torso inertia.
    pub inertia: Mat3,
    /// Inertia-normalized link gravity moment, world frame (1/s^2).
    pub k_vec: Vec3,
    /// Orientation state, rotation vector of the actual attitude.
    pub x1: Vec3,
    /// Desired orientation as a rotation vector.
    pub x1d: Vec3,
    /// Orientation tracking error x1 - x1d, computed on-manifold.
    pub x_tilde: Vec3,
    /// World angular velocity.
    pub x2: Vec3,
}

impl DynamicsContext {
    /// Build the context from the model and the measured/desired attitudes.
    /// `link_gravity_moment` is the world-frame gravity moment of the links
    /// in newton-meters; it is inertia-normalized here.
    pub fn from_attitude(
        model: &RobotModel,
        q_actual: &UnitQuat,
        q_desired: &UnitQuat,
        omega: &Vec3,
        link_gravity_moment: &Vec3,
    ) -> Result<Self, crate::so3::So3Error> {
        let inertia = model.torso_inertia;
        let b_dyn = inertia
            .try_inverse()
            .expect("torso inertia is SPD by construction");
        let x1 = crate::so3::log_rotation(&q_actual.to_rotation_matrix().into_inner())?;
        let x1d = crate::so3::log_rotation(&q_desired.to_rotation_matrix().into_inner())?;
        // On-manifold error: log of the relative rotation, not a chart
        // subtraction.
        let x_tilde = crate::so3::orientation_error(q_actual, q_desired)?;
        Ok(Self {
            b_dyn,
            inertia,
            k_vec: b_dyn * link_gravity_moment,
            x1,
            x1d,
            x_tilde,
            x2: *omega,
        })
    }

    /// Direct construction for analysis loops that work in chart
    /// coordinates.
    pub fn from_parts(inertia: Mat3, k_vec: Vec3, x1: Vec3, x1d: Vec3, x2: Vec3) -> Self {
        let b_dyn = inertia.try_inverse().expect("inertia must be invertible");
        Self {
            b_dyn,
            inertia,
            k_vec,
            x1,
            x1d,
            x_tilde: x1 - x1d,
            x2,
        }
    }
}

/// Published snapshot consumed by the wrench controller.
#[derive(Debug, Clone, Copy)]
pub struct PayloadEstimate {
    pub m_p: f64,
    pub d_hat: Vec3,
    pub converged: bool,
}

/// Mutable estimator state, owned by the control loop.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    /// Published payload mass estimate (windowed mean, clamped at 0).
    pub m_hat: f64,
    /// Latest raw analytic mass sample, before smoothing/clamping.
    pub m_hat_raw: f64,
    /// Disturbance estimate (1/s^2).
    pub d_hat: Vec3,
    /// Last update-law derivative.
    pub d_hat_dot: Vec3,
    /// Last tracking-error function value.
    pub s: Vec3,
    /// Manifold residual diagnostic, filled by the simulator when ground
    /// truth is available.
    pub z_diag: Vec3,
    pub converged: bool,
    mass_window: VecDeque<f64>,
}

impl EstimatorState {
    pub fn new() -> Self {
        Self {
            m_hat: 0.0,
            m_hat_raw: 0.0,
            d_hat: Vec3::zeros(),
            d_hat_dot: Vec3::zeros(),
            s: Vec3::zeros(),
            z_diag: Vec3::zeros(),
            converged: false,
            mass_window: VecDeque::new(),
        }
    }

    pub fn snapshot(&self) -> PayloadEstimate {
        PayloadEstimate {
            m_p: self.m_hat,
            d_hat: self.d_hat,
            converged: self.converged,
        }
    }

    /// Feed one raw mass sample; publishes the clamped windowed mean.
    pub fn push_mass_sample(&mut self, raw: f64, gains: &EstimatorGains) {
        self.m_hat_raw = raw;
        self.mass_window.push_back(raw);
        while self.mass_window.len() > gains.mass_window.max(1) {
            self.mass_window.pop_front();
        }
        let mean: f64 = self.mass_window.iter().sum::<f64>() / self.mass_window.len() as f64;
        self.m_hat = mean.max(0.0);
    }
}

impl Default for EstimatorState {
    fn default() -> Self {
        Self::new()
    }
}

/// Analytic payload mass from vertical force balance:
/// m_p = sum(F_z)/g - sum(m_i) - m a_z / g. Requires four stance feet.
pub fn estimate_payload_mass(
    model: &RobotModel,
    contact_forces: &[Vec3; NUM_LEGS],
    stance: &[bool; NUM_LEGS],
    a_b: &Vec3,
) -> Result<f64, EstimatorError> {
    if stance.iter().any(|s| !s) {
        return Err(EstimatorError::NotInStance);
    }
    let fz: f64 = contact_forces.iter().map(|f| f.z).sum();
    Ok(fz / model.gravity - model.total_mass - model.total_mass * a_b.z / model.gravity)
}

/// s = x_tilde' + lambda x_tilde, with x_tilde' = x2.
pub fn tracking_error_s(ctx: &DynamicsContext, gains: &EstimatorGains) -> Vec3 {
    ctx.x2 + gains.lambda_vec().component_mul(&ctx.x_tilde)
}

/// Moment control law u = -B^-1 (d_hat + k + c s + lambda x2).
///
/// The returned vector is the aggregate foot-force moment command in
/// newton-meters; it already carries the inertia factor, so the wrench
/// layer applies it as the body torque directly.
pub fn control_law_moment(
    ctx: &DynamicsContext,
    est: &EstimatorState,
    gains: &EstimatorGains,
) -> Vec3 {
    let s = tracking_error_s(ctx, gains);
    let inner = est.d_hat
        + ctx.k_vec
        + gains.c_vec().component_mul(&s)
        + gains.lambda_vec().component_mul(&ctx.x2);
    -(ctx.inertia * inner)
}

/// Estimation error function beta(x2) = M x2 (diagonal, linear).
pub fn beta_fn(x2: &Vec3, gains: &EstimatorGains) -> Vec3 {
    gains.m_vec().component_mul(x2)
}

/// One explicit-Euler step of the update law
/// d_hat' = -M (B u + d_hat + beta(x2) + k), with `u` the applied aggregate
/// foot moment in newton-meters. Also refreshes s.
pub fn update_law_step(
    ctx: &DynamicsContext,
    est: &mut EstimatorState,
    u: &Vec3,
    gains: &EstimatorGains,
) {
    let bu = ctx.b_dyn * u;
    let inner = bu + est.d_hat + beta_fn(&ctx.x2, gains) + ctx.k_vec;
    est.d_hat_dot = -gains.m_vec().component_mul(&inner);
    est.d_hat += est.d_hat_dot * gains.dt;
    est.s = tracking_error_s(ctx, gains);
}

/// Payload gravity moment implied by the disturbance estimate (N m).
pub fn estimated_payload_moment(est: &EstimatorState, model: &RobotModel) -> Vec3 {
    model.torso_inertia * est.d_hat
}

/// Lyapunov function V = 1/2 |s|^2.
pub fn lyapunov_value(s: &Vec3) -> f64 {
    0.5 * s.norm_squared()
}

/// Windowed convergence check: true once the per-axis orientation error has
/// stayed below the threshold for the sustain time. Latches.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceDetector {
    below_since: Option<f64>,
    latched_at: Option<f64>,
}

impl ConvergenceDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, err_inf: f64, t: f64, gains: &EstimatorGains) -> bool {
        if self.latched_at.is_some() {
            return true;
        }
        if err_inf < gains.e_threshold {
            let since = *self.below_since.get_or_insert(t);
            if t - since >= gains.sustain_time {
                self.latched_at = Some(t);
                return true;
            }
        } else {
            self.below_since = None;
        }
        false
    }

    pub fn converged(&self) -> bool {
        self.latched_at.is_some()
    }

    /// Start of the sustained window that produced the latch.
    pub fn convergence_time(&self, gains: &EstimatorGains) -> Option<f64> {
        self.latched_at.map(|t| (t - gains.sustain_time).max(0.0))
    }
}
