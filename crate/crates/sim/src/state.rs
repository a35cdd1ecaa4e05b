use nalgebra::UnitQuaternion;

use crate::model::{RobotModel, N_JOINTS};
use crate::params::PhysParams;
use crate::spatial::V3;

/// Number of non-foot probe points tracked for undesired contact.
pub const N_PROBES: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub base_pos: V3,
    pub base_rot: UnitQuaternion<f64>,
    /// Base linear velocity, body frame.
    pub base_lin_vel: V3,
    /// Base angular velocity, body frame.
    pub base_ang_vel: V3,
    pub q: [f64; N_JOINTS],
    pub qd: [f64; N_JOINTS],
    /// Ground reaction per foot from the last inner step (world frame).
    pub foot_force: [V3; 2],
    pub contact: [bool; 2],
    pub contact_time: [f64; 2],
    pub air_time: [f64; 2],
    /// Contact force magnitude at each non-foot probe point.
    pub probe_force: [f64; N_PROBES],
    pub time: f64,
}

impl SimState {
    /// Upright above the origin at height `base_z`, joints at `q`, at rest.
    pub fn at_rest(base_z: f64, q: [f64; N_JOINTS]) -> Self {
        Self {
            base_pos: V3::new(0.0, 0.0, base_z),
            base_rot: UnitQuaternion::identity(),
            base_lin_vel: V3::zeros(),
            base_ang_vel: V3::zeros(),
            q,
            qd: [0.0; N_JOINTS],
            foot_force: [V3::zeros(); 2],
            contact: [false; 2],
            contact_time: [0.0; 2],
            air_time: [0.0; 2],
            probe_force: [0.0; N_PROBES],
            time: 0.0,
        }
    }

    /// Straight-leg stance on flat ground at `ground_z`, lowered by the static
    /// penalty penetration so the feet start in equilibrium.
    pub fn standing(model: &RobotModel, params: &PhysParams, ground_z: f64, kn: f64) -> Self {
        let weight = (model.total_mass() + params.payload) * params.gravity();
        let sink = 0.5 * weight / kn;
        let mut s = Self::at_rest(ground_z + model.nominal_height() - sink, model.q_default);
        s.contact = [true; 2];
        s
    }

    /// World-frame gravity direction in the base frame.
    pub fn projected_gravity(&self) -> V3 {
        self.base_rot.inverse_transform_vector(&V3::new(0.0, 0.0, -1.0))
    }

    /// Angle between the base z axis and world up.
    pub fn tilt(&self) -> f64 {
        (-self.projected_gravity().z).clamp(-1.0, 1.0).acos()
    }

    pub fn is_finite(&self) -> bool {
        self.base_pos.iter().all(|v| v.is_finite())
            && self.base_rot.coords.iter().all(|v| v.is_finite())
            && self.base_lin_vel.iter().all(|v| v.is_finite())
            && self.base_ang_vel.iter().all(|v| v.is_finite())
            && self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}
