//! Ground-truth physical parameters and their per-episode randomization.

use rand::Rng;

use crate::model::N_JOINTS;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysParams {
    /// Coulomb coefficient per foot (left, right).
    pub friction: [f64; 2],
    /// Mass added to the torso (kg), may be negative.
    pub payload: f64,
    /// Added to the nominal 9.81 m/s².
    pub gravity_delta: f64,
    pub stiffness_scale: [f64; N_JOINTS],
    pub damping_scale: [f64; N_JOINTS],
    /// Added to each PD target (rad).
    pub motor_offset: [f64; N_JOINTS],
    /// In [0,1); reduces normal contact damping by `1 - restitution`.
    pub restitution: f64,
}

pub const GRAVITY: f64 = 9.81;

impl Default for PhysParams {
    fn default() -> Self {
        Self {
            friction: [1.0; 2],
            payload: 0.0,
            gravity_delta: 0.0,
            stiffness_scale: [1.0; N_JOINTS],
            damping_scale: [1.0; N_JOINTS],
            motor_offset: [0.0; N_JOINTS],
            restitution: 0.0,
        }
    }
}

impl PhysParams {
    pub fn gravity(&self) -> f64 {
        GRAVITY + self.gravity_delta
    }
}

/// Closed intervals `(lo, hi)` for each randomized quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrRanges {
    pub friction: (f64, f64),
    pub payload: (f64, f64),
    pub gravity: (f64, f64),
    pub stiffness: (f64, f64),
    pub damping: (f64, f64),
    pub motor_offset: (f64, f64),
    pub restitution: (f64, f64),
}

impl Default for DrRanges {
    fn default() -> Self {
        Self {
            friction: (0.2, 1.5),
            payload: (-2.0, 2.0),
            gravity: (-0.1, 0.1),
            stiffness: (0.8, 1.2),
            damping: (0.8, 1.2),
            motor_offset: (-0.1, 0.1),
            restitution: (0.0, 0.0),
        }
    }
}

impl DrRanges {
    /// Every interval collapsed onto the identity of its operator.
    pub fn none() -> Self {
        Self {
            friction: (1.0, 1.0),
            payload: (0.0, 0.0),
            gravity: (0.0, 0.0),
            stiffness: (1.0, 1.0),
            damping: (1.0, 1.0),
            motor_offset: (0.0, 0.0),
            restitution: (0.0, 0.0),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// One independent draw per quantity. Friction and restitution are absolute,
/// payload/gravity/offset add to `nominal`, stiffness/damping multiply it.
pub fn randomize<R: Rng + ?Sized>(nominal: &PhysParams, rng: &mut R, ranges: &DrRanges) -> PhysParams {
    let mut p = *nominal;
    for f in &mut p.friction {
        *f = uniform(rng, ranges.friction);
    }
    p.payload = nominal.payload + uniform(rng, ranges.payload);
    p.gravity_delta = nominal.gravity_delta + uniform(rng, ranges.gravity);
    for j in 0..N_JOINTS {
        p.stiffness_scale[j] = nominal.stiffness_scale[j] * uniform(rng, ranges.stiffness);
        p.damping_scale[j] = nominal.damping_scale[j] * uniform(rng, ranges.damping);
        p.motor_offset[j] = nominal.motor_offset[j] + uniform(rng, ranges.motor_offset);
    }
    p.restitution = uniform(rng, ranges.restitution);
    p
}
