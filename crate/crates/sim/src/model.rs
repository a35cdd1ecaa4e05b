//! Point-foot biped: box torso plus two three-joint legs.
//!
//! Joint order is `[L hip-roll, L hip-pitch, L knee, R hip-roll, R hip-pitch, R knee]`.
//! Body `0` is the torso (floating base); bodies `1..=6` follow the joint order.
//! Positive pitch swings the thigh/shank backwards; with all joints at zero the
//! legs hang straight down.

use crate::error::{Result, SimError};
use crate::spatial::{Inertia, M3, V3};

pub const N_JOINTS: usize = 6;
pub const N_BODIES: usize = 7;
pub const N_DOF: usize = 6 + N_JOINTS;
pub const FOOT_BODIES: [usize; 2] = [3, 6];

/// Joint names in actuator order.
pub const JOINT_NAMES: [&str; N_JOINTS] =
    ["l_hip_roll", "l_hip_pitch", "l_knee", "r_hip_roll", "r_hip_pitch", "r_knee"];

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub torso_mass: f64,
    /// Box extents along x, y, z (m).
    pub torso_size: [f64; 3],
    /// Left hip joint position in torso coordinates; the right hip mirrors y.
    pub hip_offset: [f64; 3],
    pub hip_mass: f64,
    pub thigh_mass: f64,
    pub thigh_length: f64,
    pub shank_mass: f64,
    pub shank_length: f64,
    pub q_lower: [f64; N_JOINTS],
    pub q_upper: [f64; N_JOINTS],
    pub q_default: [f64; N_JOINTS],
    pub kp: [f64; N_JOINTS],
    pub kd: [f64; N_JOINTS],
    pub torque_limit: [f64; N_JOINTS],
    /// Largest accepted |action| component (rad offset from default).
    pub action_bound: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        let leg_lo = [-0.6, -1.6, -0.1];
        let leg_hi = [0.6, 0.6, 2.4];
        Self {
            torso_mass: 10.0,
            torso_size: [0.2, 0.3, 0.3],
            hip_offset: [0.0, 0.1, -0.15],
            hip_mass: 0.2,
            thigh_mass: 1.0,
            thigh_length: 0.4,
            shank_mass: 1.0,
            shank_length: 0.4,
            q_lower: [leg_lo[0], leg_lo[1], leg_lo[2], -leg_hi[0], leg_lo[1], leg_lo[2]],
            q_upper: [leg_hi[0], leg_hi[1], leg_hi[2], -leg_lo[0], leg_hi[1], leg_hi[2]],
            q_default: [0.0; N_JOINTS],
            kp: [40.0; N_JOINTS],
            kd: [2.0; N_JOINTS],
            torque_limit: [40.0; N_JOINTS],
            action_bound: 1.0,
        }
    }
}

/// Static description of one body of the kinematic tree.
#[derive(Clone, Copy, Debug)]
pub struct BodySpec {
    pub parent: Option<usize>,
    /// Joint axis in the child frame (unit vector, revolute joints only).
    pub axis: V3,
    /// Joint origin in parent coordinates.
    pub offset: V3,
    pub inertia: Inertia,
}

fn rod_inertia(m: f64, len: f64) -> Inertia {
    let r = 0.03f64;
    let ixx = m * (3.0 * r * r + len * len) / 12.0;
    let izz = 0.5 * m * r * r;
    Inertia::from_com(m, V3::new(0.0, 0.0, -0.5 * len), M3::from_diagonal(&V3::new(ixx, ixx, izz)))
}

impl RobotModel {
    // Negated comparisons so that NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let masses = [self.torso_mass, self.hip_mass, self.thigh_mass, self.shank_mass];
        if masses.iter().any(|m| !(*m > 0.0)) {
            return Err(SimError::InvalidModel("masses must be positive".into()));
        }
        if self.torso_size.iter().chain([self.thigh_length, self.shank_length].iter()).any(|l| !(*l > 0.0)) {
            return Err(SimError::InvalidModel("lengths must be positive".into()));
        }
        for j in 0..N_JOINTS {
            if !(self.q_lower[j] < self.q_upper[j]) {
                return Err(SimError::InvalidModel(format!("joint {} limits not ordered", JOINT_NAMES[j])));
            }
            if !(self.kp[j] >= 0.0 && self.kd[j] >= 0.0 && self.torque_limit[j] > 0.0) {
                return Err(SimError::InvalidModel(format!("joint {} gains", JOINT_NAMES[j])));
            }
        }
        if !(self.action_bound > 0.0) {
            return Err(SimError::InvalidModel("action_bound must be positive".into()));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.torso_mass + 2.0 * (self.hip_mass + self.thigh_mass + self.shank_mass)
    }

    pub fn leg_length(&self) -> f64 {
        self.thigh_length + self.shank_length
    }

    /// Base height above flat ground when standing on straight legs with zero penetration.
    pub fn nominal_height(&self) -> f64 {
        self.leg_length() - self.hip_offset[2]
    }

    /// Tree with `payload` kg added at the torso centre (inertia scaled with mass).
    pub fn bodies(&self, payload: f64) -> [BodySpec; N_BODIES] {
        let [sx, sy, sz] = self.torso_size;
        let m = self.torso_mass;
        let box_i = M3::from_diagonal(&V3::new(
            m * (sy * sy + sz * sz) / 12.0,
            m * (sx * sx + sz * sz) / 12.0,
            m * (sx * sx + sy * sy) / 12.0,
        ));
        let mt = m + payload;
        let torso = Inertia::from_com(mt, V3::zeros(), box_i * (mt / m));
        let hip_i = Inertia::from_com(self.hip_mass, V3::zeros(), M3::identity() * (0.4 * self.hip_mass * 0.04 * 0.04));
        let thigh = rod_inertia(self.thigh_mass, self.thigh_length);
        let shank = rod_inertia(self.shank_mass, self.shank_length);
        let x_axis = V3::new(1.0, 0.0, 0.0);
        let y_axis = V3::new(0.0, 1.0, 0.0);
        let [hx, hy, hz] = self.hip_offset;
        let leg = |base: usize, side: f64| {
            [
                BodySpec { parent: Some(0), axis: x_axis, offset: V3::new(hx, side * hy, hz), inertia: hip_i },
                BodySpec { parent: Some(base), axis: y_axis, offset: V3::zeros(), inertia: thigh },
                BodySpec {
                    parent: Some(base + 1),
                    axis: y_axis,
                    offset: V3::new(0.0, 0.0, -self.thigh_length),
                    inertia: shank,
                },
            ]
        };
        let l = leg(1, 1.0);
        let r = leg(4, -1.0);
        [
            BodySpec { parent: None, axis: V3::zeros(), offset: V3::zeros(), inertia: torso },
            l[0],
            l[1],
            l[2],
            r[0],
            r[1],
            r[2],
        ]
    }

    /// Foot point in shank coordinates.
    pub fn foot_point(&self) -> V3 {
        V3::new(0.0, 0.0, -self.shank_length)
    }

    /// Non-foot probe points `(body, local point)`: both knees and the four
    /// bottom corners of the torso.
    pub fn probe_points(&self) -> [(usize, V3); 6] {
        let [sx, sy, sz] = self.torso_size;
        let c = |x: f64, y: f64| (0usize, V3::new(x * sx / 2.0, y * sy / 2.0, -sz / 2.0));
        [(3, V3::zeros()), (6, V3::zeros()), c(1.0, 1.0), c(1.0, -1.0), c(-1.0, 1.0), c(-1.0, -1.0)]
    }
}
