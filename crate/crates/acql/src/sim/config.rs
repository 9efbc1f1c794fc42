//! Scenario description: payload truth, gait selection, targets, gains and
//! simulator knobs, loadable from TOML.

use crate::control::GainSet;
use crate::estimator::EstimatorGains;
use crate::robot::{RobotError, RobotModel};
use crate::so3::UnitQuat;
use serde::Deserialize;
use std::path::Path;

/// Integrator/measurement knobs.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    /// Total simulated time, identification included.
    pub duration: f64,
    /// Relative (1-sigma) multiplicative noise on applied contact forces.
    pub force_noise_rel: f64,
    /// Force measurements lag the actuation by this many ticks.
    pub sensor_latency_ticks: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            duration: 6.0,
            force_noise_rel: 0.0,
            sensor_latency_ticks: 0,
            seed: 0,
        }
    }
}

/// Ground-truth payload rigidly attached to the torso.
#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(default)]
pub struct PayloadTruth {
    pub mass: f64,
    /// Payload CoM offset in the body frame (m).
    pub com_offset: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitKind {
    StandIdentify,
    TrotInPlace,
}

/// Trot timing; only read for `TrotInPlace`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct TrotConfig {
    /// Duration of one stance/swing phase (s).
    pub phase_duration: f64,
    pub apex_height: f64,
    /// Standing identification window before the trot starts.
    pub identify_duration: f64,
}

impl Default for TrotConfig {
    fn default() -> Self {
        Self {
            phase_duration: 0.5,
            apex_height: 0.05,
            identify_duration: 5.0,
        }
    }
}

/// Held body pose target.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub height: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            height: 0.40,
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
        }
    }
}

impl TargetConfig {
    pub fn quat(&self) -> UnitQuat {
        UnitQuat::from_euler_angles(self.roll, self.pitch, self.yaw)
    }
}

/// How the initial body pose is chosen relative to the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Start on the slow closed-loop mode of the identification dynamics:
    /// tilted into the payload with a matching angular rate, so the
    /// recovery is a clean exponential.
    SlowMode,
    /// Start exactly at the target pose.
    Upright,
    /// Start at the static tilt where the PID torque balances the payload
    /// moment, with zero rate.
    StaticTilt,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub mode: InitMode,
    /// Horizontal anchor offset per leg, added to the point below the hip.
    pub anchor_offsets: [[f64; 2]; 4],
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            mode: InitMode::SlowMode,
            anchor_offsets: [[0.0; 2]; 4],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Robot model TOML, resolved relative to the scenario file. Falls back
    /// to the built-in model.
    #[serde(default)]
    pub robot: Option<String>,
    #[serde(default)]
    pub payload: PayloadTruth,
    pub gait: GaitKind,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub trot: TrotConfig,
    #[serde(default)]
    pub gains: GainSet,
    #[serde(default)]
    pub estimator: EstimatorGains,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub init: InitConfig,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, RobotError> {
        let mut s: Scenario =
            toml::from_str(text).map_err(|e| RobotError::BadModel(e.to_string()))?;
        s.estimator.dt = s.sim.dt;
        s.gains.validate()?;
        Ok(s)
    }

    /// Load the scenario and its robot model (path relative to the scenario
    /// file when given).
    pub fn load(path: &Path) -> Result<(Self, RobotModel), RobotError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RobotError::BadModel(format!("{}: {e}", path.display())))?;
        let scn = Self::from_toml_str(&text)?;
        let model = match &scn.robot {
            Some(rel) => {
                let rp = path.parent().unwrap_or(Path::new(".")).join(rel);
                let rt = std::fs::read_to_string(&rp)
                    .map_err(|e| RobotError::BadModel(format!("{}: {e}", rp.display())))?;
                RobotModel::from_toml_str(&rt)?
            }
            None => RobotModel::kirin_default(),
        };
        Ok((scn, model))
    }

    /// Programmatic standing-identification scenario used by tests and the
    /// sweep default.
    pub fn builtin_stand(name: &str, mass: f64, com_offset: [f64; 3]) -> Self {
        Self {
            name: name.to_string(),
            robot: None,
            payload: PayloadTruth { mass, com_offset },
            gait: GaitKind::StandIdentify,
            target: TargetConfig::default(),
            trot: TrotConfig::default(),
            gains: GainSet::default(),
            estimator: EstimatorGains::default(),
            sim: SimConfig {
                duration: 4.0,
                ..SimConfig::default()
            },
            init: InitConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scenario_roundtrip_minimal() {
        let s = Scenario::from_toml_str(
            r#"
name = "stand"
gait = "stand_identify"

[payload]
mass = 50.0
com_offset = [0.15, 0.10, 0.0]

[sim]
duration = 6.0
seed = 7
"#,
        )
        .unwrap();
        assert_eq!(s.name, "stand");
        assert_eq!(s.gait, GaitKind::StandIdentify);
        assert_abs_diff_eq!(s.payload.mass, 50.0);
        assert_eq!(s.sim.seed, 7);
        // defaults fill in
        assert_abs_diff_eq!(s.sim.dt, 1e-3);
        assert_abs_diff_eq!(s.estimator.dt, 1e-3);
        assert_abs_diff_eq!(s.gains.kp_t[0], 200.0);
        assert_eq!(s.init.mode, InitMode::SlowMode);
    }

    #[test]
    fn scenario_dt_propagates_to_estimator() {
        let s = Scenario::from_toml_str(
            "name = \"x\"\ngait = \"trot_in_place\"\n[sim]\ndt = 5e-4\n",
        )
        .unwrap();
        assert_abs_diff_eq!(s.estimator.dt, 5e-4);
    }

    #[test]
    fn bad_gait_rejected() {
        assert!(Scenario::from_toml_str("name=\"x\"\ngait=\"gallop\"\n").is_err());
    }

    #[test]
    fn target_quat_matches_euler() {
        let t = TargetConfig {
            height: 0.41,
            yaw: 3.25,
            pitch: -0.01,
            roll: 0.0,
        };
        let q = t.quat();
        let (r, p, y) = q.euler_angles();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p, -0.01, epsilon = 1e-12);
        // yaw wraps into (-pi, pi]
        assert_abs_diff_eq!(
            (y - 3.25).rem_euclid(2.0 * std::f64::consts::PI),
            0.0,
            epsilon = 1e-9
        );
    }
}
