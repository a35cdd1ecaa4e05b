//! Vectorized environment: 10 inner dynamics steps per policy step,
//! auto-reset with fresh randomization and curriculum terrain.

use std::sync::Arc;

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use wmr_sim::dynamics::{foot_velocities, step_with_contacts};
use wmr_sim::terrain::{generate_with, TerrainSpec};
use wmr_sim::{
    curriculum_update, pd_torque, randomize, ContactGains, CurriculumRule, DrRanges, Heightfield, PhysParams,
    RobotModel, SimState, TerrainKind, DECIMATION, DT, N_JOINTS,
};

use crate::command::{Command, CommandGen, CommandSource, Trajectory};
use crate::config::{EnvConfig, RewardConfig, RunConfig};
use crate::error::{Result, WmrError};
use crate::obs::{build_observation, build_world_state, NoiseRanges, OBS_DIM, WORLD_DIM};
use crate::reward::{check_termination, compute_reward, DoneKind, RewardBreakdown, RewardInput};

/// Policy period (s).
pub const POLICY_DT: f64 = DT * DECIMATION as f64;

/// Test hooks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnvOptions {
    /// Overwrite the base planar velocity and yaw rate with the command after
    /// every policy step (tracking-error oracle).
    pub force_command_velocity: bool,
}

#[derive(Clone, Debug)]
struct Shared {
    model: RobotModel,
    env: EnvConfig,
    reward: RewardConfig,
    dr: DrRanges,
    gains: ContactGains,
    spec: TerrainSpec,
    rule: CurriculumRule,
    noise: NoiseRanges,
    horizon: usize,
    options: EnvOptions,
}

/// Summary of one finished episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub env: usize,
    pub ret: f64,
    pub len: usize,
    /// Mean over steps of ‖v_xy − v*_xy‖.
    pub e_vel: f64,
    /// Mean over steps of |ω_z − ω*_z|.
    pub e_ang: f64,
    /// Terrain level after the curriculum update.
    pub level: u32,
    pub terminated: bool,
}

#[derive(Clone, Debug, Default)]
struct Accum {
    ret: f64,
    vel_err: f64,
    ang_err: f64,
    walked: f64,
    commanded: f64,
}

#[derive(Clone, Debug)]
struct Slot {
    index: usize,
    state: SimState,
    params: PhysParams,
    terrain: Heightfield,
    kind: TerrainKind,
    level: u32,
    cmd: CommandGen,
    rng: ChaCha8Rng,
    prev_action: [f64; N_JOINTS],
    step: usize,
    acc: Accum,
    obs: [f64; OBS_DIM],
    world: [f64; WORLD_DIM],
}

struct SlotOut {
    breakdown: RewardBreakdown,
    done: DoneKind,
    cmd: Command,
    terminal_world: Option<[f64; WORLD_DIM]>,
    episode: Option<EpisodeStats>,
}

/// Result of one batched step. Observation and world state rows are the ones
/// the policy sees next, so rows of finished envs come from the fresh episode.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub obs: Vec<f64>,
    pub world: Vec<f64>,
    pub reward: Vec<f64>,
    pub breakdown: Vec<RewardBreakdown>,
    pub done: Vec<DoneKind>,
    /// Command active during the step.
    pub cmd: Vec<Command>,
    /// World state at the horizon for timed-out envs, before the reset.
    pub terminal_world: Vec<Option<[f64; WORLD_DIM]>>,
    /// Finished episodes in env order.
    pub episodes: Vec<EpisodeStats>,
}

impl Slot {
    fn reset(&mut self, sh: &Shared) -> Result<()> {
        self.params = randomize(&PhysParams::default(), &mut self.rng, &sh.dr);
        let terrain_seed: u64 = self.rng.random();
        self.terrain = generate_with(&sh.spec, self.kind, self.level, terrain_seed)?;
        let ground = self.terrain.height_at(0.0, 0.0).0;
        let mut s = SimState::standing(&sh.model, &self.params, ground, sh.gains.kn);
        let yaw = std::f64::consts::PI * (2.0 * self.rng.random::<f64>() - 1.0);
        s.base_rot = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
        self.state = s;
        self.cmd.reset(&mut self.rng);
        self.prev_action = sh.model.q_default;
        self.step = 0;
        self.acc = Accum::default();
        self.observe(sh);
        Ok(())
    }

    fn observe(&mut self, sh: &Shared) {
        let c = self.cmd.current();
        self.obs = build_observation(&self.state, c, &self.prev_action, &sh.noise, &mut self.rng);
        self.world = build_world_state(&self.state, &self.params, c, &self.prev_action);
    }

    fn step(&mut self, sh: &Shared, raw: &[f32]) -> Result<SlotOut> {
        let m = &sh.model;
        let mut action = [0.0; N_JOINTS];
        for j in 0..N_JOINTS {
            let a = (raw[j] as f64).clamp(-sh.env.action_clip, sh.env.action_clip) * sh.env.action_scale;
            action[j] = a.clamp(-m.action_bound, m.action_bound);
        }
        let before = self.state.clone();
        let mut tau = [0.0; N_JOINTS];
        for _ in 0..DECIMATION {
            tau = pd_torque(m, &action, &self.state, &self.params)?;
            self.state = step_with_contacts(m, &self.state, &tau, &self.params, &self.terrain, &sh.gains, DT)?.0;
        }
        let cmd = self.cmd.current();
        if sh.options.force_command_velocity {
            self.state.base_lin_vel.x = cmd.vx;
            self.state.base_lin_vel.y = cmd.vy;
            self.state.base_ang_vel.z = cmd.wz;
        }
        self.step += 1;
        let done = check_termination(&self.state, &self.terrain, &sh.env, sh.gains.threshold, self.step, sh.horizon);
        let foot_vel = foot_velocities(m, &self.params, &self.state);
        let target: [f64; N_JOINTS] = std::array::from_fn(|j| m.q_default[j] + action[j]);
        let breakdown = compute_reward(
            m,
            &sh.reward,
            &RewardInput {
                before: &before,
                after: &self.state,
                cmd,
                action: &target,
                prev_action: &self.prev_action,
                torque: &tau,
                foot_vel: &foot_vel,
                terminated: done == DoneKind::Terminated,
                dt: POLICY_DT,
                contact_threshold: sh.gains.threshold,
            },
        );

        let v = &self.state.base_lin_vel;
        self.acc.ret += breakdown.total;
        self.acc.vel_err += (v.x - cmd.vx).hypot(v.y - cmd.vy);
        self.acc.ang_err += (self.state.base_ang_vel.z - cmd.wz).abs();
        let speed = cmd.lin_norm();
        if speed > 1e-9 {
            self.acc.walked += (v.x * cmd.vx + v.y * cmd.vy) / speed * POLICY_DT;
        }
        self.acc.commanded += speed * POLICY_DT;
        self.prev_action = target;
        self.cmd.advance(self.step as f64 * POLICY_DT, POLICY_DT, &mut self.rng);

        let mut out = SlotOut { breakdown, done, cmd, terminal_world: None, episode: None };
        if done.is_done() {
            if done == DoneKind::TimedOut {
                out.terminal_world =
                    Some(build_world_state(&self.state, &self.params, self.cmd.current(), &self.prev_action));
            }
            let next = curriculum_update(self.level, self.acc.walked, self.acc.commanded, &sh.rule);
            // A fall never earns harder terrain, even when little distance was commanded.
            self.level = if done == DoneKind::Terminated { next.min(self.level) } else { next };
            let n = self.step as f64;
            out.episode = Some(EpisodeStats {
                env: self.index,
                ret: self.acc.ret,
                len: self.step,
                e_vel: self.acc.vel_err / n,
                e_ang: self.acc.ang_err / n,
                level: self.level,
                terminated: done == DoneKind::Terminated,
            });
            self.reset(sh)?;
        } else {
            self.observe(sh);
        }
        Ok(out)
    }
}

/// Independent ChaCha8 stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub struct VecEnv {
    shared: Shared,
    slots: Vec<Slot>,
}

impl VecEnv {
    /// `n` envs on the streams of `seed`. `levels` seeds the curriculum
    /// (cycled when shorter than `n`); kinds are dealt round-robin.
    pub fn new(cfg: &RunConfig, n: usize, seed: u64, source: CommandSource, levels: Option<&[u32]>) -> Result<Self> {
        Self::with_options(cfg, n, seed, source, levels, EnvOptions::default())
    }

    pub fn with_options(
        cfg: &RunConfig,
        n: usize,
        seed: u64,
        source: CommandSource,
        levels: Option<&[u32]>,
        options: EnvOptions,
    ) -> Result<Self> {
        let e = &cfg.env;
        let shared = Shared {
            model: cfg.robot.clone(),
            env: e.clone(),
            reward: cfg.reward.clone(),
            dr: cfg.dr,
            gains: cfg.contact,
            spec: TerrainSpec::default(),
            rule: CurriculumRule {
                promote: cfg.terrain.promote,
                demote: cfg.terrain.demote,
                max_level: cfg.terrain.max_level,
            },
            noise: NoiseRanges {
                ang_vel: e.noise_ang_vel,
                gravity: e.noise_gravity,
                joint_pos: e.noise_joint_pos,
                joint_vel: e.noise_joint_vel,
            },
            horizon: cfg.episode_steps(),
            options,
        };
        let trajectory = if e.command.trajectory_file.is_empty() {
            None
        } else {
            Some(Arc::new(Trajectory::load(&e.command.trajectory_file)?))
        };
        let mut slots = Vec::with_capacity(n);
        for i in 0..n {
            let level =
                levels.filter(|l| !l.is_empty()).map(|l| l[i % l.len()]).unwrap_or(0).min(cfg.terrain.max_level);
            let kinds = &cfg.terrain.kinds;
            let mut slot = Slot {
                index: i,
                state: SimState::at_rest(0.0, cfg.robot.q_default),
                params: PhysParams::default(),
                terrain: Heightfield::from_fn(1.0, 2, |_, _| 0.0),
                kind: kinds[i % kinds.len()],
                level,
                cmd: CommandGen::new(&e.command, source, trajectory.clone())?,
                rng: stream_rng(seed, i as u64),
                prev_action: [0.0; N_JOINTS],
                step: 0,
                acc: Accum::default(),
                obs: [0.0; OBS_DIM],
                world: [0.0; WORLD_DIM],
            };
            slot.reset(&shared)?;
            slots.push(slot);
        }
        Ok(Self { shared, slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Current observations, row-major `[n, OBS_DIM]`.
    pub fn obs(&self) -> Vec<f64> {
        self.slots.iter().flat_map(|s| s.obs).collect()
    }

    /// Current world states, row-major `[n, WORLD_DIM]`.
    pub fn world(&self) -> Vec<f64> {
        self.slots.iter().flat_map(|s| s.world).collect()
    }

    pub fn levels(&self) -> Vec<u32> {
        self.slots.iter().map(|s| s.level).collect()
    }

    pub fn mean_level(&self) -> f64 {
        self.slots.iter().map(|s| s.level as f64).sum::<f64>() / self.slots.len().max(1) as f64
    }

    pub fn state(&self, env: usize) -> &SimState {
        &self.slots[env].state
    }

    pub fn params(&self, env: usize) -> &PhysParams {
        &self.slots[env].params
    }

    pub fn episode_step(&self, env: usize) -> usize {
        self.slots[env].step
    }

    /// Advance every env by one policy step. `actions` is row-major `[n, N_JOINTS]`
    /// of raw policy outputs.
    pub fn step(&mut self, actions: &[f32]) -> Result<StepBatch> {
        let n = self.slots.len();
        if actions.len() != n * N_JOINTS {
            return Err(WmrError::Numerical(format!(
                "action batch has {} values, expected {}",
                actions.len(),
                n * N_JOINTS
            )));
        }
        if let Some(k) = actions.iter().position(|a| !a.is_finite()) {
            return Err(WmrError::NonFiniteAction { env: k / N_JOINTS });
        }
        let sh = &self.shared;
        #[cfg(feature = "parallel")]
        let outs: Vec<SlotOut> = self
            .slots
            .par_iter_mut()
            .zip(actions.par_chunks(N_JOINTS))
            .map(|(slot, a)| slot.step(sh, a))
            .collect::<Result<_>>()?;
        #[cfg(not(feature = "parallel"))]
        let outs: Vec<SlotOut> = self
            .slots
            .iter_mut()
            .zip(actions.chunks(N_JOINTS))
            .map(|(slot, a)| slot.step(sh, a))
            .collect::<Result<_>>()?;

        let mut batch = StepBatch {
            obs: self.obs(),
            world: self.world(),
            reward: Vec::with_capacity(n),
            breakdown: Vec::with_capacity(n),
            done: Vec::with_capacity(n),
            cmd: Vec::with_capacity(n),
            terminal_world: Vec::with_capacity(n),
            episodes: Vec::new(),
        };
        for o in outs {
            batch.reward.push(o.breakdown.total);
            batch.breakdown.push(o.breakdown);
            batch.done.push(o.done);
            batch.cmd.push(o.cmd);
            batch.terminal_world.push(o.terminal_world);
            batch.episodes.extend(o.episode);
        }
        Ok(batch)
    }
}
