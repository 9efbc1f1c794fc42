//! In-place trot schedule: alternating diagonal pairs with a quintic swing
//! height profile (zero velocity at liftoff and touchdown).

/// Diagonal pair A: front-left (0) and rear-right (3).
pub const PAIR_A: [usize; 2] = [0, 3];
/// Diagonal pair B: front-right (1) and rear-left (2).
pub const PAIR_B: [usize; 2] = [1, 2];

/// Quintic smoothstep p(u) = 6u^5 - 15u^4 + 10u^3, p(0)=0, p(1)=1, with
/// zero first and second derivatives at both ends.
pub fn quintic(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    ((6.0 * u - 15.0) * u + 10.0) * u * u * u
}

/// Normalized swing height: two quintic halves, 0 at the ends, 1 at the
/// apex (u = 1/2).
pub fn swing_profile(u: f64) -> f64 {
    if u < 0.5 {
        quintic(2.0 * u)
    } else {
        quintic(2.0 - 2.0 * u)
    }
}

#[derive(Debug, Clone)]
pub struct GaitSchedule {
    pub phase_duration: f64,
    pub apex_height: f64,
}

impl GaitSchedule {
    pub fn new(phase_duration: f64, apex_height: f64) -> Self {
        Self {
            phase_duration,
            apex_height,
        }
    }

    /// Phase index at trot time `t` (t = 0 is the first liftoff).
    pub fn phase_index(&self, t: f64) -> usize {
        (t / self.phase_duration).floor().max(0.0) as usize
    }

    /// Normalized progress within the current phase, in [0, 1).
    pub fn phase_progress(&self, t: f64) -> f64 {
        let u = (t / self.phase_duration).rem_euclid(1.0);
        u.clamp(0.0, 1.0)
    }

    /// Legs in swing at trot time `t`. Pair B lifts first, so pair A is in
    /// stance for the whole first phase.
    pub fn swing_pair(&self, t: f64) -> [usize; 2] {
        if self.phase_index(t) % 2 == 0 {
            PAIR_B
        } else {
            PAIR_A
        }
    }

    /// Swing foot height above its anchor at trot time `t`.
    pub fn swing_height(&self, t: f64) -> f64 {
        self.apex_height * swing_profile(self.phase_progress(t))
    }
}
