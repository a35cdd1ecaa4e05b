//! Flat `key = value` run configuration.
//!
//! Every tunable has one dotted key. The canonical text form lists all keys in
//! declaration order, so `from_text(to_text(c))` re-serializes byte-identically.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use wmr_sim::{ContactGains, DrRanges, RobotModel, TerrainKind, MAX_LEVEL, N_JOINTS};

use crate::command::CommandSource;
use crate::error::{Result, WmrError};

/// Learner wiring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Wmr,
    NoCutoff,
    RandomCmd,
    PpoOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Wmr, Variant::NoCutoff, Variant::RandomCmd, Variant::PpoOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Wmr => "wmr",
            Variant::NoCutoff => "no-cutoff",
            Variant::RandomCmd => "random-cmd",
            Variant::PpoOnly => "ppo-only",
        }
    }

    pub fn has_estimator(self) -> bool {
        self != Variant::PpoOnly
    }

    pub fn cutoff(self) -> bool {
        self != Variant::NoCutoff
    }
}

impl Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = WmrError;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            WmrError::Config(format!("unknown variant `{s}` (expected wmr, no-cutoff, random-cmd, ppo-only)"))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommandConfig {
    /// Source used during training rollouts.
    pub source: CommandSource,
    /// Source used by evaluation, shared by every variant.
    pub eval_source: CommandSource,
    pub max_vx: f64,
    pub max_vy: f64,
    pub max_yaw: f64,
    pub resample_s: f64,
    pub tau_s: f64,
    pub trajectory_file: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub episode_s: f64,
    /// Raw policy outputs are clipped to ±action_clip, then scaled to radians.
    pub action_clip: f64,
    pub action_scale: f64,
    pub noise_ang_vel: f64,
    pub noise_gravity: f64,
    pub noise_joint_pos: f64,
    pub noise_joint_vel: f64,
    pub max_tilt: f64,
    pub min_height: f64,
    pub command: CommandConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardConfig {
    /// Multiplies every term; the policy period by default.
    pub scale: f64,
    pub sigma_vel: f64,
    pub sigma_ang: f64,
    pub track_lin_vel: f64,
    pub track_ang_vel: f64,
    pub termination: f64,
    pub lin_vel_z: f64,
    pub energy: f64,
    pub ang_vel_xy: f64,
    pub joint_acc: f64,
    pub action_rate: f64,
    pub orientation: f64,
    pub joint_pos_limit: f64,
    pub soft_limit: f64,
    pub joint_dev_pitch: f64,
    pub joint_dev_roll: f64,
    pub feet_air_time: f64,
    pub air_time_max: f64,
    pub feet_force: f64,
    pub force_threshold: f64,
    pub force_max: f64,
    pub force_scale: f64,
    pub feet_stumble: f64,
    pub feet_slide: f64,
    pub flying: f64,
    pub flying_eps: f64,
    pub undesired_contacts: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerrainConfig {
    pub kinds: Vec<TerrainKind>,
    pub max_level: u32,
    pub promote: f64,
    pub demote: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub pol_hidden: usize,
    pub mlp1: usize,
    pub mlp2: usize,
    pub init_log_std: f64,
    pub min_log_std: f64,
    pub max_log_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub steps: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f64,
    pub clip: f64,
    pub gamma: f64,
    pub lam: f64,
    pub entropy: f64,
    pub max_grad_norm: f64,
    pub lambda_cont: f64,
    pub lambda_dis: f64,
    pub lambda_reg: f64,
    pub lambda_v: f64,
    pub lambda_pi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub envs: usize,
    pub iters: usize,
    pub variant: Variant,
    /// 0 uses every available core.
    pub workers: usize,
    pub checkpoint_every: usize,
    pub env: EnvConfig,
    pub reward: RewardConfig,
    pub dr: DrRanges,
    pub robot: RobotModel,
    pub contact: ContactGains,
    pub terrain: TerrainConfig,
    pub net: NetConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            envs: 256,
            iters: 500,
            variant: Variant::Wmr,
            workers: 0,
            checkpoint_every: 100,
            env: EnvConfig {
                episode_s: 20.0,
                action_clip: 4.0,
                action_scale: 0.25,
                noise_ang_vel: 0.2,
                noise_gravity: 0.1,
                noise_joint_pos: 0.01,
                noise_joint_vel: 1.5,
                max_tilt: 1.0,
                min_height: 0.3,
                command: CommandConfig {
                    source: CommandSource::Synthetic,
                    eval_source: CommandSource::Synthetic,
                    max_vx: 1.0,
                    max_vy: 0.5,
                    max_yaw: 1.0,
                    resample_s: 5.0,
                    tau_s: 2.0,
                    trajectory_file: String::new(),
                },
            },
            reward: RewardConfig {
                scale: 0.02,
                sigma_vel: 0.25,
                sigma_ang: 0.25,
                track_lin_vel: 1.0,
                track_ang_vel: 1.0,
                termination: -200.0,
                lin_vel_z: -1.0,
                energy: -0.001,
                ang_vel_xy: -0.05,
                joint_acc: -2.5e-7,
                action_rate: -0.01,
                orientation: -2.0,
                joint_pos_limit: -2.0,
                soft_limit: 0.9,
                joint_dev_pitch: -0.05,
                joint_dev_roll: -0.1,
                feet_air_time: 0.2,
                air_time_max: 0.4,
                feet_force: 5e-3,
                force_threshold: 500.0,
                force_max: 400.0,
                force_scale: 0.4,
                feet_stumble: -2.0,
                feet_slide: -0.25,
                flying: -1.0,
                flying_eps: 0.001,
                undesired_contacts: -1.0,
            },
            dr: DrRanges::default(),
            robot: RobotModel::default(),
            contact: ContactGains::default(),
            terrain: TerrainConfig {
                kinds: TerrainKind::ALL.to_vec(),
                max_level: MAX_LEVEL,
                promote: 0.8,
                demote: 0.4,
            },
            net: NetConfig {
                enc_hidden: 256,
                dec_hidden: 256,
                pol_hidden: 256,
                mlp1: 256,
                mlp2: 128,
                init_log_std: 0.0,
                min_log_std: -4.0,
                max_log_std: 1.0,
            },
            ppo: PpoConfig {
                steps: 24,
                epochs: 5,
                minibatches: 4,
                lr: 2.5e-5,
                clip: 0.2,
                gamma: 0.99,
                lam: 0.95,
                entropy: 0.01,
                max_grad_norm: 1.0,
                lambda_cont: 1.0,
                lambda_dis: 0.3,
                lambda_reg: 0.005,
                lambda_v: 1.0,
                lambda_pi: 1.0,
            },
            eval: EvalConfig { episodes: 32 },
        }
    }
}

/// A value that has one canonical text form.
pub trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
        }
    )*};
}

display_value!(f64, u64, u32, usize, bool, Variant, CommandSource, TerrainKind);

impl ConfigValue for String {
    fn render(&self) -> String {
        self.clone()
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(s.to_string())
    }
}

fn split_list<T: ConfigValue>(s: &str) -> std::result::Result<Vec<T>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| T::parse_value(p.trim())).collect()
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn render(&self) -> String {
        self.iter().map(ConfigValue::render).collect::<Vec<_>>().join(",")
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        split_list(s)
    }
}

impl<T: ConfigValue + Copy, const N: usize> ConfigValue for [T; N] {
    fn render(&self) -> String {
        self.iter().map(ConfigValue::render).collect::<Vec<_>>().join(",")
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<T> = split_list(s)?;
        v.try_into().map_err(|v: Vec<T>| format!("expected {N} values, got {}", v.len()))
    }
}

impl ConfigValue for (f64, f64) {
    fn render(&self) -> String {
        format!("{},{}", self.0, self.1)
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let [lo, hi] = <[f64; 2]>::parse_value(s)?;
        if lo > hi {
            return Err(format!("range {lo},{hi} has lo > hi"));
        }
        Ok((lo, hi))
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ ;)*) => {
        /// Every key in canonical order.
        pub const KEYS: &[&str] = &[$($key),*];

        fn render_key(c: &RunConfig, key: &str) -> Option<String> {
            match key {
                $($key => Some(ConfigValue::render(&c $(.$field)+)),)*
                _ => None,
            }
        }

        fn assign_key(c: &mut RunConfig, key: &str, value: &str) -> Result<()> {
            match key {
                $($key => {
                    c $(.$field)+ = ConfigValue::parse_value(value)
                        .map_err(|e| WmrError::Config(format!("`{key}`: {e}")))?;
                })*
                _ => return Err(WmrError::UnknownKey(key.to_string())),
            }
            Ok(())
        }
    };
}

config_keys! {
    "seed" => seed;
    "envs" => envs;
    "iters" => iters;
    "variant" => variant;
    "workers" => workers;
    "checkpoint_every" => checkpoint_every;
    "env.episode_s" => env.episode_s;
    "env.action_clip" => env.action_clip;
    "env.action_scale" => env.action_scale;
    "noise.ang_vel" => env.noise_ang_vel;
    "noise.gravity" => env.noise_gravity;
    "noise.joint_pos" => env.noise_joint_pos;
    "noise.joint_vel" => env.noise_joint_vel;
    "termination.max_tilt" => env.max_tilt;
    "termination.min_height" => env.min_height;
    "command.source" => env.command.source;
    "command.eval_source" => env.command.eval_source;
    "command.max_vx" => env.command.max_vx;
    "command.max_vy" => env.command.max_vy;
    "command.max_yaw" => env.command.max_yaw;
    "command.resample_s" => env.command.resample_s;
    "command.tau_s" => env.command.tau_s;
    "command.trajectory_file" => env.command.trajectory_file;
    "reward.scale" => reward.scale;
    "reward.sigma_vel" => reward.sigma_vel;
    "reward.sigma_ang" => reward.sigma_ang;
    "reward.track_lin_vel" => reward.track_lin_vel;
    "reward.track_ang_vel" => reward.track_ang_vel;
    "reward.termination" => reward.termination;
    "reward.lin_vel_z" => reward.lin_vel_z;
    "reward.energy" => reward.energy;
    "reward.ang_vel_xy" => reward.ang_vel_xy;
    "reward.joint_acc" => reward.joint_acc;
    "reward.action_rate" => reward.action_rate;
    "reward.orientation" => reward.orientation;
    "reward.joint_pos_limit" => reward.joint_pos_limit;
    "reward.soft_limit" => reward.soft_limit;
    "reward.joint_dev_pitch" => reward.joint_dev_pitch;
    "reward.joint_dev_roll" => reward.joint_dev_roll;
    "reward.feet_air_time" => reward.feet_air_time;
    "reward.air_time_max" => reward.air_time_max;
    "reward.feet_force" => reward.feet_force;
    "reward.force_threshold" => reward.force_threshold;
    "reward.force_max" => reward.force_max;
    "reward.force_scale" => reward.force_scale;
    "reward.feet_stumble" => reward.feet_stumble;
    "reward.feet_slide" => reward.feet_slide;
    "reward.flying" => reward.flying;
    "reward.flying_eps" => reward.flying_eps;
    "reward.undesired_contacts" => reward.undesired_contacts;
    "dr.friction" => dr.friction;
    "dr.payload" => dr.payload;
    "dr.gravity" => dr.gravity;
    "dr.stiffness" => dr.stiffness;
    "dr.damping" => dr.damping;
    "dr.motor_offset" => dr.motor_offset;
    "dr.restitution" => dr.restitution;
    "robot.torso_mass" => robot.torso_mass;
    "robot.thigh_length" => robot.thigh_length;
    "robot.shank_length" => robot.shank_length;
    "robot.q_lower" => robot.q_lower;
    "robot.q_upper" => robot.q_upper;
    "robot.q_default" => robot.q_default;
    "robot.kp" => robot.kp;
    "robot.kd" => robot.kd;
    "robot.torque_limit" => robot.torque_limit;
    "contact.kn" => contact.kn;
    "contact.cn" => contact.cn;
    "contact.kt" => contact.kt;
    "contact.threshold" => contact.threshold;
    "terrain.kinds" => terrain.kinds;
    "terrain.max_level" => terrain.max_level;
    "terrain.promote" => terrain.promote;
    "terrain.demote" => terrain.demote;
    "net.enc_hidden" => net.enc_hidden;
    "net.dec_hidden" => net.dec_hidden;
    "net.pol_hidden" => net.pol_hidden;
    "net.mlp1" => net.mlp1;
    "net.mlp2" => net.mlp2;
    "net.init_log_std" => net.init_log_std;
    "net.min_log_std" => net.min_log_std;
    "net.max_log_std" => net.max_log_std;
    "ppo.steps" => ppo.steps;
    "ppo.epochs" => ppo.epochs;
    "ppo.minibatches" => ppo.minibatches;
    "ppo.lr" => ppo.lr;
    "ppo.clip" => ppo.clip;
    "ppo.gamma" => ppo.gamma;
    "ppo.lam" => ppo.lam;
    "ppo.entropy" => ppo.entropy;
    "ppo.max_grad_norm" => ppo.max_grad_norm;
    "loss.lambda_cont" => ppo.lambda_cont;
    "loss.lambda_dis" => ppo.lambda_dis;
    "loss.lambda_reg" => ppo.lambda_reg;
    "loss.lambda_v" => ppo.lambda_v;
    "loss.lambda_pi" => ppo.lambda_pi;
    "eval.episodes" => eval.episodes;
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Result<String> {
        render_key(self, key).ok_or_else(|| WmrError::UnknownKey(key.to_string()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        assign_key(self, key, value.trim())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| WmrError::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&render_key(self, key).expect("declared key"));
            out.push('\n');
        }
        out
    }

    /// Defaults overlaid with the assignments in `text`. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| WmrError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            c.set(k.trim(), v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// `default` names the built-in configuration.
    pub fn load(path: &str) -> Result<Self> {
        if path == "default" {
            return Ok(RunConfig::default());
        }
        let text = std::fs::read_to_string(Path::new(path))
            .map_err(|e| WmrError::Config(format!("cannot read {path}: {e}")))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WmrError::Config(m));
        if self.envs == 0 {
            return bad("envs must be positive".into());
        }
        if self.ppo.minibatches == 0 || self.ppo.minibatches > self.envs {
            return bad(format!("ppo.minibatches must be in 1..={}", self.envs));
        }
        if self.ppo.steps == 0 || self.ppo.epochs == 0 {
            return bad("ppo.steps and ppo.epochs must be positive".into());
        }
        let c = &self.env.command;
        for (k, v) in [("command.max_vx", c.max_vx), ("command.max_vy", c.max_vy), ("command.max_yaw", c.max_yaw)] {
            if !(0.0..=1.5).contains(&v) {
                return bad(format!("{k} = {v} outside [0, 1.5]"));
            }
        }
        if c.resample_s <= 0.0 || c.tau_s <= 0.0 || self.env.episode_s <= 0.0 {
            return bad("time constants must be positive".into());
        }
        let e = &self.env;
        if [e.noise_ang_vel, e.noise_gravity, e.noise_joint_pos, e.noise_joint_vel].iter().any(|&n| n < 0.0) {
            return bad("noise ranges must be non-negative".into());
        }
        if self.terrain.kinds.is_empty() {
            return bad("terrain.kinds is empty".into());
        }
        if self.terrain.max_level > MAX_LEVEL {
            return bad(format!("terrain.max_level above {MAX_LEVEL}"));
        }
        if self.dr.friction.0 <= 0.0 || self.dr.stiffness.0 <= 0.0 || self.dr.damping.0 <= 0.0 {
            return bad("friction, stiffness and damping ranges must be positive".into());
        }
        if self.robot.torso_mass + self.dr.payload.0 <= 0.0 {
            return bad("payload range makes the torso mass non-positive".into());
        }
        let n = &self.net;
        if [n.enc_hidden, n.dec_hidden, n.pol_hidden, n.mlp1, n.mlp2].contains(&0) {
            return bad("network widths must be positive".into());
        }
        if n.min_log_std > n.max_log_std {
            return bad("net.min_log_std above net.max_log_std".into());
        }
        let p = &self.ppo;
        if [p.lambda_cont, p.lambda_dis, p.lambda_reg, p.lambda_v, p.lambda_pi, p.entropy, p.lr]
            .iter()
            .any(|&x| x < 0.0)
        {
            return bad("loss weights and learning rate must be non-negative".into());
        }
        self.robot.validate().map_err(|e| WmrError::Config(e.to_string()))?;
        debug_assert_eq!(self.robot.kp.len(), N_JOINTS);
        Ok(())
    }

    /// Policy steps per episode.
    pub fn episode_steps(&self) -> usize {
        (self.env.episode_s / (wmr_sim::DT * wmr_sim::DECIMATION as f64)).round() as usize
    }

    /// Command source for training rollouts; random-cmd overrides the configured one.
    pub fn train_source(&self) -> CommandSource {
        match self.variant {
            Variant::RandomCmd => CommandSource::Random,
            _ => self.env.command.source,
        }
    }
}
