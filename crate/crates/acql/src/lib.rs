//! Adaptive payload identification and contact-force control for a
//! payload-carrying quadruped, plus a ground-truth rigid-body simulator
//! used to exercise the full loop.

pub mod control;
pub mod estimator;
pub mod qp;
pub mod robot;
pub mod sim;
pub mod so3;

pub use so3::{Mat3, UnitQuat, Vec3};
