//! Observation and world-state vectors.
//!
//! Layout (raw physical units, `n = N_JOINTS`):
//!
//! | block        | field          | dims |
//! |--------------|----------------|------|
//! | proprio      | ang_vel        | 3    |
//! |              | proj_gravity   | 3    |
//! |              | command        | 3    |
//! |              | joint_pos      | n    |
//! |              | joint_vel      | n    |
//! |              | last_action    | n    |
//! | privileged   | base_vel       | 3    |
//! |              | contact        | 2    |
//! |              | friction       | 2    |
//! |              | payload        | 1    |
//! |              | gravity        | 1    |
//! |              | stiffness      | n    |
//! |              | damping        | n    |
//! |              | motor_offset   | n    |
//!
//! The observation is the noisy proprio block; the world state is the
//! noise-free proprio block followed by the privileged block. Networks see
//! every channel through a fixed affine map `(x - offset) * scale`.

use rand::Rng;
use wmr_sim::{PhysParams, SimState, N_JOINTS};

use crate::command::Command;

const N: usize = N_JOINTS;

pub const OBS_DIM: usize = 9 + 3 * N;
pub const PRIV_DIM: usize = 9 + 3 * N;
pub const WORLD_DIM: usize = OBS_DIM + PRIV_DIM;
/// Index of the first contact-mask entry in the world state.
pub const CONTACT_START: usize = OBS_DIM + 3;
/// World state without the contact mask.
pub const CONT_DIM: usize = WORLD_DIM - 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Field {
    pub name: &'static str,
    pub start: usize,
    pub len: usize,
    pub offset: f64,
    pub scale: f64,
}

const fn field(name: &'static str, start: usize, len: usize, offset: f64, scale: f64) -> Field {
    Field { name, start, len, offset, scale }
}

pub const FIELDS: [Field; 14] = [
    field("ang_vel", 0, 3, 0.0, 0.25),
    field("proj_gravity", 3, 3, 0.0, 1.0),
    field("command", 6, 3, 0.0, 1.0),
    field("joint_pos", 9, N, 0.0, 1.0),
    field("joint_vel", 9 + N, N, 0.0, 0.05),
    field("last_action", 9 + 2 * N, N, 0.0, 1.0),
    field("base_vel", OBS_DIM, 3, 0.0, 1.0),
    field("contact", CONTACT_START, 2, 0.0, 1.0),
    field("friction", CONTACT_START + 2, 2, 0.85, 1.5),
    field("payload", CONTACT_START + 4, 1, 0.0, 0.5),
    field("gravity", CONTACT_START + 5, 1, 0.0, 10.0),
    field("stiffness", CONTACT_START + 6, N, 1.0, 5.0),
    field("damping", CONTACT_START + 6 + N, N, 1.0, 5.0),
    field("motor_offset", CONTACT_START + 6 + 2 * N, N, 0.0, 10.0),
];

/// Index of the proprio fields within [`FIELDS`].
pub const N_PROPRIO_FIELDS: usize = 6;

/// Half-widths of the additive uniform observation noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseRanges {
    pub ang_vel: f64,
    pub gravity: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
}

impl NoiseRanges {
    pub fn zero() -> Self {
        Self { ang_vel: 0.0, gravity: 0.0, joint_pos: 0.0, joint_vel: 0.0 }
    }

    /// Per-channel half-width; command and last action are never noised.
    pub fn channel_bounds(&self) -> [f64; OBS_DIM] {
        let mut b = [0.0; OBS_DIM];
        b[0..3].fill(self.ang_vel);
        b[3..6].fill(self.gravity);
        b[9..9 + N].fill(self.joint_pos);
        b[9 + N..9 + 2 * N].fill(self.joint_vel);
        b
    }
}

fn proprio(s: &SimState, cmd: Command, last_action: &[f64; N]) -> [f64; OBS_DIM] {
    let mut o = [0.0; OBS_DIM];
    o[0..3].copy_from_slice(s.base_ang_vel.as_slice());
    o[3..6].copy_from_slice(s.projected_gravity().as_slice());
    o[6..9].copy_from_slice(&cmd.as_array());
    o[9..9 + N].copy_from_slice(&s.q);
    o[9 + N..9 + 2 * N].copy_from_slice(&s.qd);
    o[9 + 2 * N..].copy_from_slice(last_action);
    o
}

/// Noisy proprioception. `last_action` is the previous PD target offset
/// plus the default joint position.
pub fn build_observation<R: Rng + ?Sized>(
    s: &SimState,
    cmd: Command,
    last_action: &[f64; N],
    noise: &NoiseRanges,
    rng: &mut R,
) -> [f64; OBS_DIM] {
    let mut o = proprio(s, cmd, last_action);
    for (x, b) in o.iter_mut().zip(noise.channel_bounds()) {
        if b > 0.0 {
            *x += b * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    o
}

/// Noise-free reconstruction target.
pub fn build_world_state(s: &SimState, p: &PhysParams, cmd: Command, last_action: &[f64; N]) -> [f64; WORLD_DIM] {
    let mut w = [0.0; WORLD_DIM];
    w[..OBS_DIM].copy_from_slice(&proprio(s, cmd, last_action));
    let k = OBS_DIM;
    w[k..k + 3].copy_from_slice(s.base_lin_vel.as_slice());
    w[k + 3] = s.contact[0] as u8 as f64;
    w[k + 4] = s.contact[1] as u8 as f64;
    w[k + 5..k + 7].copy_from_slice(&p.friction);
    w[k + 7] = p.payload;
    w[k + 8] = p.gravity_delta;
    w[k + 9..k + 9 + N].copy_from_slice(&p.stiffness_scale);
    w[k + 9 + N..k + 9 + 2 * N].copy_from_slice(&p.damping_scale);
    w[k + 9 + 2 * N..].copy_from_slice(&p.motor_offset);
    w
}

const fn affine_table() -> [(f64, f64); WORLD_DIM] {
    let mut t = [(0.0, 1.0); WORLD_DIM];
    let mut i = 0;
    while i < FIELDS.len() {
        let f = FIELDS[i];
        let mut c = f.start;
        while c < f.start + f.len {
            t[c] = (f.offset, f.scale);
            c += 1;
        }
        i += 1;
    }
    t
}

/// Per-channel `(offset, scale)` of the world state; the observation uses the prefix.
pub const AFFINE: [(f64, f64); WORLD_DIM] = affine_table();

/// Network-space copy of a raw observation or world-state prefix.
pub fn scale_into(raw: &[f64], out: &mut [f32]) {
    debug_assert_eq!(raw.len(), out.len());
    for ((x, o), (off, sc)) in raw.iter().zip(out.iter_mut()).zip(AFFINE) {
        *o = ((x - off) * sc) as f32;
    }
}

/// Continuous-block channel `k` as a world-state index.
pub fn cont_to_world(k: usize) -> usize {
    if k < CONTACT_START {
        k
    } else {
        k + 2
    }
}

/// Per-field mean squared error between two scaled world-state rows sets.
/// `pred` and `truth` are row-major `[rows, WORLD_DIM]`.
pub fn field_sq_errors(pred: &[f32], truth: &[f32]) -> [f64; FIELDS.len()] {
    let rows = truth.len() / WORLD_DIM;
    let mut out = [0.0; FIELDS.len()];
    for (fi, f) in FIELDS.iter().enumerate() {
        let mut acc = 0.0;
        for r in 0..rows {
            for c in f.start..f.start + f.len {
                let d = pred[r * WORLD_DIM + c] as f64 - truth[r * WORLD_DIM + c] as f64;
                acc += d * d;
            }
        }
        out[fi] = acc / (rows * f.len).max(1) as f64;
    }
    out
}
