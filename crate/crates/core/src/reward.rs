//! Per-step reward terms and termination.

use wmr_sim::spatial::V3;
use wmr_sim::{Heightfield, RobotModel, SimState, N_JOINTS};

use crate::command::Command;
use crate::config::{EnvConfig, RewardConfig};

pub const N_TERMS: usize = 17;

pub const TERM_NAMES: [&str; N_TERMS] = [
    "track_lin_vel",
    "track_ang_vel",
    "termination",
    "lin_vel_z",
    "energy",
    "ang_vel_xy",
    "joint_acc",
    "action_rate",
    "orientation",
    "joint_pos_limit",
    "joint_deviation",
    "feet_air_time",
    "feet_force",
    "feet_stumble",
    "feet_slide",
    "flying",
    "undesired_contacts",
];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardBreakdown {
    pub terms: [f64; N_TERMS],
    pub total: f64,
}

impl RewardBreakdown {
    pub fn get(&self, name: &str) -> Option<f64> {
        TERM_NAMES.iter().position(|n| *n == name).map(|i| self.terms[i])
    }
}

/// Everything one policy step contributes to the reward.
pub struct RewardInput<'a> {
    pub before: &'a SimState,
    pub after: &'a SimState,
    pub cmd: Command,
    /// Current and previous PD target offsets (rad).
    pub action: &'a [f64; N_JOINTS],
    pub prev_action: &'a [f64; N_JOINTS],
    /// Torque of the last inner step.
    pub torque: &'a [f64; N_JOINTS],
    pub foot_vel: &'a [V3; 2],
    pub terminated: bool,
    /// Policy period (s), used for the joint-acceleration difference.
    pub dt: f64,
    /// Non-foot contact threshold (N).
    pub contact_threshold: f64,
}

fn sq(x: f64) -> f64 {
    x * x
}

pub fn compute_reward(model: &RobotModel, cfg: &RewardConfig, r: &RewardInput<'_>) -> RewardBreakdown {
    let s = r.after;
    let v = &s.base_lin_vel;
    let w = &s.base_ang_vel;
    let mut t = [0.0; N_TERMS];

    t[0] = cfg.track_lin_vel * (-(sq(v.x - r.cmd.vx) + sq(v.y - r.cmd.vy)) / cfg.sigma_vel).exp();
    t[1] = cfg.track_ang_vel * (-sq(w.z - r.cmd.wz) / cfg.sigma_ang).exp();
    t[2] = cfg.termination * r.terminated as u8 as f64;
    t[3] = cfg.lin_vel_z * sq(v.z);
    t[4] = cfg.energy * (0..N_JOINTS).map(|j| (r.torque[j] * s.qd[j]).abs()).sum::<f64>();
    t[5] = cfg.ang_vel_xy * (sq(w.x) + sq(w.y));
    t[6] = cfg.joint_acc * (0..N_JOINTS).map(|j| sq((s.qd[j] - r.before.qd[j]) / r.dt)).sum::<f64>();
    t[7] = cfg.action_rate * (0..N_JOINTS).map(|j| sq(r.action[j] - r.prev_action[j])).sum::<f64>();
    let g = s.projected_gravity();
    t[8] = cfg.orientation * (sq(g.x) + sq(g.y));

    let mut over = 0.0;
    for j in 0..N_JOINTS {
        let mid = 0.5 * (model.q_lower[j] + model.q_upper[j]);
        let half = 0.5 * (model.q_upper[j] - model.q_lower[j]) * cfg.soft_limit;
        over += (s.q[j] - (mid + half)).max(0.0) + ((mid - half) - s.q[j]).max(0.0);
    }
    t[9] = cfg.joint_pos_limit * over;

    // Joints 0 and 3 are hip roll; the rest are pitch joints.
    t[10] = (0..N_JOINTS)
        .map(|j| {
            let k = if j % 3 == 0 { cfg.joint_dev_roll } else { cfg.joint_dev_pitch };
            k * (s.q[j] - model.q_default[j]).abs()
        })
        .sum();

    let n_contact = s.contact.iter().filter(|&&c| c).count();
    if n_contact == 1 && r.cmd.lin_norm() > 0.1 {
        let mode_time =
            (0..2).map(|i| if s.contact[i] { s.contact_time[i] } else { s.air_time[i] }).fold(f64::INFINITY, f64::min);
        t[11] = cfg.feet_air_time * mode_time.min(cfg.air_time_max);
    }

    let (f_th, f_max) = (cfg.force_threshold * cfg.force_scale, cfg.force_max * cfg.force_scale);
    t[12] = cfg.feet_force * s.foot_force.iter().filter(|f| f.z > f_th).map(|f| (f.z - f_th).min(f_max)).sum::<f64>();
    let stumble = s.foot_force.iter().any(|f| f.x.hypot(f.y) > f.z);
    t[13] = cfg.feet_stumble * stumble as u8 as f64;
    t[14] =
        cfg.feet_slide * (0..2).filter(|&i| s.contact[i]).map(|i| r.foot_vel[i].x.hypot(r.foot_vel[i].y)).sum::<f64>();
    let contact_sum: f64 = s.contact_time.iter().sum();
    t[15] = cfg.flying * (contact_sum < cfg.flying_eps) as u8 as f64;
    let undesired = s.probe_force.iter().filter(|&&f| f > r.contact_threshold).count();
    t[16] = cfg.undesired_contacts * undesired as f64;

    for x in &mut t {
        *x *= cfg.scale;
    }
    RewardBreakdown { terms: t, total: t.iter().sum() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DoneKind {
    Running,
    Terminated,
    TimedOut,
}

impl DoneKind {
    pub fn is_done(self) -> bool {
        self != DoneKind::Running
    }
}

/// Falls and body contacts terminate; reaching the horizon times out.
pub fn check_termination(
    s: &SimState,
    terrain: &Heightfield,
    cfg: &EnvConfig,
    contact_threshold: f64,
    step: usize,
    horizon: usize,
) -> DoneKind {
    let ground = terrain.height_at(s.base_pos.x, s.base_pos.y).0;
    let fallen = s.tilt() > cfg.max_tilt
        || s.base_pos.z - ground < cfg.min_height
        || s.probe_force.iter().any(|&f| f > contact_threshold);
    if fallen {
        DoneKind::Terminated
    } else if step >= horizon {
        DoneKind::TimedOut
    } else {
        DoneKind::Running
    }
}
