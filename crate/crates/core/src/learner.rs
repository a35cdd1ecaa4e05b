//! Recurrent PPO with the world-model estimator trained alongside.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wmr_autodiff::{adam_step, clip_global_norm, AdamState, Tape, Tensor, Var};

use crate::config::RunConfig;
use crate::env::{stream_rng, EpisodeStats, VecEnv};
use crate::error::{Result, WmrError};
use crate::nets::{gaussian_entropy, gaussian_log_prob, Memory, MemoryVars, Nets, StateVars};
use crate::obs::{field_sq_errors, scale_into, CONTACT_START, FIELDS, OBS_DIM, WORLD_DIM};
use crate::ppo::{
    compute_gae, normalize_advantages, ppo_policy_loss, reconstruction_loss, value_loss, LossWeights, StepEnd,
};
use crate::reward::DoneKind;

const INIT_STREAM: u64 = 1 << 40;
const ACTION_SALT: u64 = 0xA11C_E5ED_0000_0001;
const SHUFFLE_SALT: u64 = 0x5EED_5407_F1E0_0002;

/// Seed of the env streams for a run (re)started at `iteration`.
pub fn env_seed(seed: u64, iteration: usize) -> u64 {
    seed.wrapping_add((iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Fresh networks for `cfg`, drawn from the run seed.
pub fn init_nets(cfg: &RunConfig) -> Nets {
    let mut rng = stream_rng(cfg.seed, INIT_STREAM);
    Nets::new(&cfg.net, cfg.variant, &mut rng)
}

/// One segment of experience for every env, stored time-major.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub envs: usize,
    pub steps: usize,
    /// Scaled observations, `[steps][envs * OBS_DIM]`.
    pub obs: Vec<Vec<f32>>,
    /// Scaled true world states, `[steps][envs * WORLD_DIM]`.
    pub world: Vec<Vec<f32>>,
    /// Whether the env began a new episode at this step (memory zeroed first).
    pub starts: Vec<Vec<bool>>,
    pub actions: Vec<Vec<f32>>,
    pub logp: Vec<Vec<f32>>,
    pub values: Vec<Vec<f32>>,
    pub rewards: Vec<Vec<f64>>,
    pub ends: Vec<Vec<StepEnd>>,
    pub bootstrap: Vec<f64>,
    /// Recurrent state before the first step.
    pub memory: Memory,
    /// Normalized advantages, index `t * envs + e`.
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Summed per-field squared errors of the estimate and the row count.
    pub field_err: [f64; FIELDS.len()],
    pub field_rows: usize,
    pub episodes: Vec<EpisodeStats>,
}

impl Rollout {
    /// Mean over fields of the per-field reconstruction MSE; NaN without an estimator.
    pub fn e_recon(&self) -> f64 {
        if self.field_rows == 0 {
            return f64::NAN;
        }
        self.field_err.iter().map(|e| e / self.field_rows as f64).sum::<f64>() / FIELDS.len() as f64
    }
}

/// Scalar parts of one minibatch loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub bce: f64,
    pub l1: f64,
    pub value: f64,
    pub policy: f64,
    pub entropy: f64,
    /// Largest `|r − 1|` of the importance ratio.
    pub max_ratio_dev: f64,
    pub clip_frac: f64,
}

impl LossParts {
    fn accumulate(&mut self, o: &LossParts) {
        self.total += o.total;
        self.mse += o.mse;
        self.bce += o.bce;
        self.l1 += o.l1;
        self.value += o.value;
        self.policy += o.policy;
        self.entropy += o.entropy;
        self.max_ratio_dev = self.max_ratio_dev.max(o.max_ratio_dev);
        self.clip_frac += o.clip_frac;
    }

    fn divide(&mut self, k: f64) {
        let mdev = self.max_ratio_dev;
        for x in [
            &mut self.total,
            &mut self.mse,
            &mut self.bce,
            &mut self.l1,
            &mut self.value,
            &mut self.policy,
            &mut self.entropy,
            &mut self.clip_frac,
        ] {
            *x /= k;
        }
        self.max_ratio_dev = mdev;
    }
}

/// Everything logged after one training iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub mean_reward: f64,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_e_vel: f64,
    pub mean_level: f64,
    pub e_recon: f64,
    pub loss: LossParts,
    /// Importance-ratio deviation on the very first minibatch (should be 0).
    pub first_ratio_dev: f64,
    pub grad_norm: f64,
    pub steps_per_sec: f64,
}

impl IterationLog {
    pub const CSV_HEADER: &'static str = "iteration,mean_reward,episodes,mean_return,mean_e_vel,mean_level,e_recon,loss,mse,bce,l1,value_loss,policy_loss,entropy,clip_frac,grad_norm";

    /// One CSV row; wall-clock throughput is left out so logs stay reproducible.
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        let vals = [
            self.mean_reward,
            self.episodes as f64,
            self.mean_return,
            self.mean_e_vel,
            self.mean_level,
            self.e_recon,
            l.total,
            l.mse,
            l.bce,
            l.l1,
            l.value,
            l.policy,
            l.entropy,
            l.clip_frac,
            self.grad_norm,
        ];
        let mut s = self.iteration.to_string();
        for v in vals {
            s.push(',');
            s.push_str(&crate::metrics::fmt_sig(v));
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "iter {:>5}  reward {:>9.4}  return {:>9.3}  episodes {:>4}  level {:.2}  E_recon {:.4}  loss {:.4} (mse {:.4} bce {:.4} l1 {:.3} v {:.4} pi {:.4})  |g| {:.3}  {:.0} steps/s",
            self.iteration,
            self.mean_reward,
            self.mean_return,
            self.episodes,
            self.mean_level,
            self.e_recon,
            self.loss.total,
            self.loss.mse,
            self.loss.bce,
            self.loss.l1,
            self.loss.value,
            self.loss.policy,
            self.grad_norm,
            self.steps_per_sec
        )
    }
}

pub struct Learner {
    pub cfg: RunConfig,
    pub nets: Nets,
    pub adam: AdamState,
    /// Completed iterations.
    pub iteration: usize,
    env: VecEnv,
    memory: Memory,
    starts: Vec<bool>,
    obs: Vec<f32>,
    world: Vec<f32>,
    action_rng: Vec<ChaCha8Rng>,
}

fn scaled(raw: &[f64], dim: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; raw.len()];
    for (r, o) in raw.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
        scale_into(r, o);
    }
    out
}

fn gather_rows(src: &[f32], dim: usize, idx: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        data.extend_from_slice(&src[i * dim..(i + 1) * dim]);
    }
    Tensor::matrix(idx.len(), dim, data).expect("gather shape")
}

fn row_mask(starts: &[bool], idx: &[usize], width: usize) -> Tensor {
    let mut data = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        let m = if starts[i] { 0.0 } else { 1.0 };
        data.extend(std::iter::repeat_n(m, width));
    }
    Tensor::matrix(idx.len(), width, data).expect("mask shape")
}

fn col(v: Vec<f32>) -> Tensor {
    let n = v.len();
    Tensor::matrix(n, 1, v).expect("column")
}

/// Split scaled world rows into the continuous and contact targets.
fn recon_targets(world: &Tensor) -> (Tensor, Tensor) {
    let rows = world.rows();
    let mut cont = Vec::with_capacity(rows * (WORLD_DIM - 2));
    let mut contact = Vec::with_capacity(rows * 2);
    for r in world.data().chunks_exact(WORLD_DIM) {
        cont.extend_from_slice(&r[..CONTACT_START]);
        contact.extend_from_slice(&r[CONTACT_START..CONTACT_START + 2]);
        cont.extend_from_slice(&r[CONTACT_START + 2..]);
    }
    (Tensor::matrix(rows, WORLD_DIM - 2, cont).expect("cont"), Tensor::matrix(rows, 2, contact).expect("contact"))
}

impl Learner {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let nets = init_nets(&cfg);
        Self::from_parts(cfg, nets, None, 0, None)
    }

    /// Rebuild from saved networks, optimizer state and curriculum levels.
    /// Envs restart fresh episodes on streams derived from `iteration`.
    pub fn from_parts(
        cfg: RunConfig,
        nets: Nets,
        adam: Option<AdamState>,
        iteration: usize,
        levels: Option<&[u32]>,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.envs;
        let seed = env_seed(cfg.seed, iteration);
        let env = VecEnv::new(&cfg, n, seed, cfg.train_source(), levels)?;
        let adam = adam.unwrap_or_else(|| AdamState::new(&nets.store, cfg.ppo.lr as f32));
        if adam.m.len() != nets.store.len() {
            return Err(WmrError::Checkpoint("optimizer state does not match the networks".into()));
        }
        let memory = nets.zero_memory(n);
        let obs = scaled(&env.obs(), OBS_DIM);
        let world = scaled(&env.world(), WORLD_DIM);
        let action_rng = (0..n).map(|e| stream_rng(seed ^ ACTION_SALT, e as u64)).collect();
        Ok(Self { cfg, nets, adam, iteration, env, memory, starts: vec![true; n], obs, world, action_rng })
    }

    pub fn levels(&self) -> Vec<u32> {
        self.env.levels()
    }

    pub fn mean_level(&self) -> f64 {
        self.env.mean_level()
    }

    /// One line describing how the policy input is wired.
    pub fn wiring_audit(&self) -> Result<String> {
        let mut tape = Tape::new();
        let p = self.nets.store.bind_frozen(&mut tape);
        let mem = MemoryVars::constant(&mut tape, &self.nets.zero_memory(1));
        let obs = tape.constant(Tensor::zeros(&[1, OBS_DIM]));
        let world = tape.constant(Tensor::zeros(&[1, WORLD_DIM]));
        self.nets.step(&mut tape, &p, obs, world, &mem)?;
        let ops = tape.op_names();
        let stops = ops.iter().filter(|&&o| o == "stop_gradient").count();
        let ids = ops.iter().filter(|&&o| o == "identity").count();
        let state = match (self.nets.variant.has_estimator(), stops) {
            (false, _) => "no estimator",
            (true, 1) => "cutoff enabled",
            _ => "cutoff disabled",
        };
        Ok(format!(
            "wiring: variant={} policy_input={} stop_gradient_nodes={} identity_nodes={} ({state})",
            self.nets.variant, self.nets.dims.pol_in, stops, ids
        ))
    }

    /// Collect `ppo.steps` policy steps from every env with frozen parameters.
    pub fn rollout(&mut self) -> Result<Rollout> {
        let n = self.cfg.envs;
        let steps = self.cfg.ppo.steps;
        let act = self.nets.dims.act;
        let mut ro = Rollout {
            envs: n,
            steps,
            obs: Vec::with_capacity(steps),
            world: Vec::with_capacity(steps),
            starts: Vec::with_capacity(steps),
            actions: Vec::with_capacity(steps),
            logp: Vec::with_capacity(steps),
            values: Vec::with_capacity(steps),
            rewards: Vec::with_capacity(steps),
            ends: Vec::with_capacity(steps),
            bootstrap: vec![0.0; n],
            memory: self.memory.clone(),
            advantages: Vec::new(),
            returns: Vec::new(),
            field_err: [0.0; FIELDS.len()],
            field_rows: 0,
            episodes: Vec::new(),
        };
        for _ in 0..steps {
            self.memory.reset_rows(&self.starts);
            let mut tape = Tape::new();
            let p = self.nets.store.bind_frozen(&mut tape);
            let mv = MemoryVars::constant(&mut tape, &self.memory);
            let obs = tape.constant(Tensor::matrix(n, OBS_DIM, self.obs.clone())?);
            let world = tape.constant(Tensor::matrix(n, WORLD_DIM, self.world.clone())?);
            let (sv, next) = self.nets.step(&mut tape, &p, obs, world, &mv)?;
            let log_std = self.nets.log_std(&mut tape, &p, n)?;
            let mean = tape.value(sv.mean).data().to_vec();
            let ls = tape.value(log_std).data().to_vec();
            let mut actions = vec![0.0f32; n * act];
            for e in 0..n {
                let rng = &mut self.action_rng[e];
                for j in 0..act {
                    let eps: f32 = rng.sample(StandardNormal);
                    actions[e * act + j] = mean[e * act + j] + ls[e * act + j].exp() * eps;
                }
            }
            let a = tape.constant(Tensor::matrix(n, act, actions.clone())?);
            let logp = gaussian_log_prob(&mut tape, sv.mean, log_std, a)?;
            let logp = tape.value(logp).data().to_vec();
            let values = tape.value(sv.value).data().to_vec();
            if logp.iter().chain(&values).any(|v| !v.is_finite()) {
                return Err(WmrError::Numerical(format!(
                    "non-finite policy output during rollout at iteration {}",
                    self.iteration
                )));
            }
            if self.nets.variant.has_estimator() {
                let errs = field_sq_errors(tape.value(sv.policy_input).data(), &self.world);
                for (acc, e) in ro.field_err.iter_mut().zip(errs) {
                    *acc += e * n as f64;
                }
                ro.field_rows += n;
            }
            self.memory = next.read(&tape);

            let batch = self.env.step(&actions)?;
            let mut ends = vec![StepEnd::Running; n];
            let timed: Vec<usize> = (0..n).filter(|&e| batch.done[e] == DoneKind::TimedOut).collect();
            let tail = if timed.is_empty() { Vec::new() } else { self.terminal_values(&batch.terminal_world, &timed)? };
            for e in 0..n {
                ends[e] = match batch.done[e] {
                    DoneKind::Running => StepEnd::Running,
                    DoneKind::Terminated => StepEnd::Terminated,
                    DoneKind::TimedOut => StepEnd::TimedOut(0.0),
                };
            }
            for (k, &e) in timed.iter().enumerate() {
                ends[e] = StepEnd::TimedOut(tail[k]);
            }

            ro.obs.push(std::mem::take(&mut self.obs));
            ro.world.push(std::mem::take(&mut self.world));
            ro.starts.push(self.starts.clone());
            ro.actions.push(actions);
            ro.logp.push(logp);
            ro.values.push(values);
            ro.rewards.push(batch.reward.clone());
            ro.ends.push(ends);
            ro.episodes.extend(batch.episodes.iter().copied());

            self.starts = batch.done.iter().map(|d| d.is_done()).collect();
            self.obs = scaled(&batch.obs, OBS_DIM);
            self.world = scaled(&batch.world, WORLD_DIM);
        }
        // Value of the state after the segment, as the next rollout will see it.
        let mut mem = self.memory.clone();
        mem.reset_rows(&self.starts);
        let mut tape = Tape::new();
        let p = self.nets.store.bind_frozen(&mut tape);
        let state = StateVars::constant(&mut tape, &mem.value);
        let world = tape.constant(Tensor::matrix(n, WORLD_DIM, self.world.clone())?);
        let v = self.nets.value_only(&mut tape, &p, world, state)?;
        ro.bootstrap = tape.value(v).data().iter().map(|&x| x as f64).collect();

        self.finish_advantages(&mut ro)?;
        Ok(ro)
    }

    /// Critic value of the true final states of timed-out envs, continuing
    /// their critic memory.
    fn terminal_values(&self, terminal: &[Option<[f64; WORLD_DIM]>], idx: &[usize]) -> Result<Vec<f64>> {
        let mut raw = Vec::with_capacity(idx.len() * WORLD_DIM);
        for &e in idx {
            let w =
                terminal[e].ok_or_else(|| WmrError::Numerical(format!("env {e} timed out without a final state")))?;
            raw.extend_from_slice(&w);
        }
        let rows = scaled(&raw, WORLD_DIM);
        let mut tape = Tape::new();
        let p = self.nets.store.bind_frozen(&mut tape);
        let st = self.memory.value.gather(idx);
        let state = StateVars::constant(&mut tape, &st);
        let world = tape.constant(Tensor::matrix(idx.len(), WORLD_DIM, rows)?);
        let v = self.nets.value_only(&mut tape, &p, world, state)?;
        Ok(tape.value(v).data().iter().map(|&x| x as f64).collect())
    }

    fn finish_advantages(&self, ro: &mut Rollout) -> Result<()> {
        let (n, steps) = (ro.envs, ro.steps);
        ro.advantages = vec![0.0; n * steps];
        ro.returns = vec![0.0; n * steps];
        for e in 0..n {
            let r: Vec<f64> = (0..steps).map(|t| ro.rewards[t][e]).collect();
            let v: Vec<f64> = (0..steps).map(|t| ro.values[t][e] as f64).collect();
            let d: Vec<StepEnd> = (0..steps).map(|t| ro.ends[t][e]).collect();
            let (adv, ret) = compute_gae(&r, &v, &d, ro.bootstrap[e], self.cfg.ppo.gamma, self.cfg.ppo.lam)?;
            for t in 0..steps {
                ro.advantages[t * n + e] = adv[t];
                ro.returns[t * n + e] = ret[t];
            }
        }
        normalize_advantages(&mut ro.advantages);
        Ok(())
    }

    /// Loss parts and parameter gradients for the envs `idx` over the whole segment.
    pub fn minibatch_gradients(
        &self,
        ro: &Rollout,
        idx: &[usize],
        w: &LossWeights,
    ) -> Result<(Vec<Tensor>, LossParts)> {
        let b = idx.len();
        let steps = ro.steps;
        let dims = self.nets.dims;
        let mut tape = Tape::new();
        let p = self.nets.store.bind(&mut tape);
        let mut mem = MemoryVars::constant(&mut tape, &ro.memory.gather(idx));
        let (mut means, mut values, mut conts, mut probs, mut latents) = (vec![], vec![], vec![], vec![], vec![]);
        let mut worlds = Vec::with_capacity(b * steps * WORLD_DIM);
        for t in 0..steps {
            if idx.iter().any(|&i| ro.starts[t][i]) {
                let pm = tape.constant(row_mask(&ro.starts[t], idx, dims.pol_hidden));
                mem.policy = mem.policy.masked(&mut tape, pm)?;
                mem.value = mem.value.masked(&mut tape, pm)?;
                if let Some(enc) = mem.encoder {
                    let em = tape.constant(row_mask(&ro.starts[t], idx, dims.enc_hidden));
                    mem.encoder = Some(enc.masked(&mut tape, em)?);
                }
            }
            let obs = tape.constant(gather_rows(&ro.obs[t], OBS_DIM, idx));
            let wt = gather_rows(&ro.world[t], WORLD_DIM, idx);
            worlds.extend_from_slice(wt.data());
            let world = tape.constant(wt);
            let (sv, next) = self.nets.step(&mut tape, &p, obs, world, &mem)?;
            mem = next;
            means.push(sv.mean);
            values.push(sv.value);
            if let (Some(c), Some(pr), Some(z)) = (sv.recon_cont, sv.recon_contact, sv.latent) {
                conts.push(c);
                probs.push(pr);
                latents.push(z);
            }
        }
        let rows = b * steps;
        let mean = tape.concat_rows(&means)?;
        let value = tape.concat_rows(&values)?;
        let mut actions = Vec::with_capacity(rows * dims.act);
        let (mut old, mut adv, mut ret) =
            (Vec::with_capacity(rows), Vec::with_capacity(rows), Vec::with_capacity(rows));
        for t in 0..steps {
            actions.extend_from_slice(gather_rows(&ro.actions[t], dims.act, idx).data());
            for &i in idx {
                old.push(ro.logp[t][i]);
                adv.push(ro.advantages[t * ro.envs + i] as f32);
                ret.push(ro.returns[t * ro.envs + i] as f32);
            }
        }
        let a = tape.constant(Tensor::matrix(rows, dims.act, actions)?);
        let log_std = self.nets.log_std(&mut tape, &p, rows)?;
        let logp = gaussian_log_prob(&mut tape, mean, log_std, a)?;
        let entropy = gaussian_entropy(&mut tape, log_std)?;
        let (lpi, ratio) = ppo_policy_loss(&mut tape, logp, &col(old), &col(adv), entropy, w.clip, w.entropy)?;
        let lv = value_loss(&mut tape, value, &col(ret))?;
        let wpi = tape.scale(lpi, w.policy)?;
        let wv = tape.scale(lv, w.value)?;
        let mut total = tape.add(wpi, wv)?;
        let mut parts = LossParts::default();
        if !conts.is_empty() {
            let c = tape.concat_rows(&conts)?;
            let pr = tape.concat_rows(&probs)?;
            let z = tape.concat_rows(&latents)?;
            let (tc, ty) = recon_targets(&Tensor::matrix(rows, WORLD_DIM, worlds)?);
            let rl = reconstruction_loss(&mut tape, c, pr, z, &tc, &ty, w)?;
            total = tape.add(total, rl.total)?;
            parts.mse = tape.value(rl.mse).item() as f64;
            parts.bce = tape.value(rl.bce).item() as f64;
            parts.l1 = tape.value(rl.l1).item() as f64;
        }
        let item = |v: Var| tape.value(v).item() as f64;
        parts.total = item(total);
        parts.value = item(lv);
        parts.policy = item(lpi);
        parts.entropy = item(entropy);
        let r = tape.value(ratio).data();
        parts.max_ratio_dev = r.iter().map(|&x| (x as f64 - 1.0).abs()).fold(0.0, f64::max);
        parts.clip_frac = r.iter().filter(|&&x| (x - 1.0).abs() > w.clip).count() as f64 / r.len().max(1) as f64;
        if !parts.total.is_finite() {
            return Err(WmrError::Numerical(format!("non-finite loss at iteration {}: {parts:?}", self.iteration)));
        }
        let grads = tape.backward(total)?;
        Ok((p.iter().map(|&v| grads.wrt(v)).collect(), parts))
    }

    /// Rollout plus `ppo.epochs` passes over shuffled env minibatches.
    pub fn train_iteration(&mut self) -> Result<IterationLog> {
        let start = Instant::now();
        let ro = self.rollout()?;
        let n = ro.envs;
        let w = LossWeights::from_config(&self.cfg.ppo);
        let mb = self.cfg.ppo.minibatches.clamp(1, n);
        let chunk = n.div_ceil(mb);
        let mut shuffle = stream_rng(self.cfg.seed ^ SHUFFLE_SALT, self.iteration as u64);
        let mut acc = LossParts::default();
        let mut gsum = 0.0;
        let mut updates = 0usize;
        let mut first_dev = f64::NAN;
        for _ in 0..self.cfg.ppo.epochs {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut shuffle);
            for idx in perm.chunks(chunk) {
                let (mut grads, parts) = self.minibatch_gradients(&ro, idx, &w)?;
                if updates == 0 {
                    first_dev = parts.max_ratio_dev;
                }
                let norm = clip_global_norm(&mut grads, self.cfg.ppo.max_grad_norm as f32);
                if !norm.is_finite() {
                    return Err(WmrError::Numerical(format!(
                        "non-finite gradient norm at iteration {}",
                        self.iteration
                    )));
                }
                adam_step(&mut self.nets.store, &grads, &mut self.adam)?;
                acc.accumulate(&parts);
                gsum += norm;
                updates += 1;
            }
        }
        acc.divide(updates.max(1) as f64);
        self.iteration += 1;
        let eps = &ro.episodes;
        let mean_of = |f: &dyn Fn(&EpisodeStats) -> f64| {
            if eps.is_empty() {
                f64::NAN
            } else {
                eps.iter().map(f).sum::<f64>() / eps.len() as f64
            }
        };
        let total_r: f64 = ro.rewards.iter().flatten().sum();
        let elapsed = start.elapsed().as_secs_f64().max(1e-9);
        Ok(IterationLog {
            iteration: self.iteration,
            mean_reward: total_r / (n * ro.steps) as f64,
            episodes: eps.len(),
            mean_return: mean_of(&|e| e.ret),
            mean_e_vel: mean_of(&|e| e.e_vel),
            mean_level: self.env.mean_level(),
            e_recon: ro.e_recon(),
            loss: acc,
            first_ratio_dev: first_dev,
            grad_norm: gsum / updates.max(1) as f64,
            steps_per_sec: (n * ro.steps) as f64 / elapsed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;

    pub(crate) fn tiny(variant: Variant) -> RunConfig {
        let mut c = RunConfig::default();
        c.variant = variant;
        c.envs = 4;
        c.ppo.steps = 6;
        c.ppo.epochs = 2;
        c.ppo.minibatches = 2;
        c.net.enc_hidden = 8;
        c.net.dec_hidden = 8;
        c.net.pol_hidden = 8;
        c.net.mlp1 = 8;
        c.net.mlp2 = 8;
        c
    }

    #[test]
    fn first_minibatch_ratio_is_exactly_one() {
        for v in Variant::ALL {
            let mut l = Learner::new(tiny(v)).unwrap();
            let log = l.train_iteration().unwrap();
            assert_eq!(log.first_ratio_dev, 0.0, "{v}");
            assert!(log.loss.total.is_finite());
        }
    }

    #[test]
    fn ratio_stays_one_across_episode_boundaries() {
        let mut c = tiny(Variant::Wmr);
        c.ppo.steps = 40;
        c.env.episode_s = 0.3;
        let mut l = Learner::new(c).unwrap();
        let ro = l.rollout().unwrap();
        assert!(ro.starts.iter().skip(1).flatten().any(|&s| s));
        assert!(ro.ends.iter().flatten().any(|e| matches!(e, StepEnd::TimedOut(_))));
        let w = LossWeights::from_config(&l.cfg.ppo);
        let (_, parts) = l.minibatch_gradients(&ro, &[2, 0], &w).unwrap();
        assert_eq!(parts.max_ratio_dev, 0.0);
    }

    #[test]
    fn policy_loss_never_reaches_estimator_through_cutoff() {
        let only_pi = LossWeights { cont: 0.0, dis: 0.0, reg: 0.0, value: 0.0, policy: 1.0, entropy: 0.01, clip: 0.2 };
        for (v, expect_zero) in [(Variant::Wmr, true), (Variant::NoCutoff, false)] {
            let mut l = Learner::new(tiny(v)).unwrap();
            let ro = l.rollout().unwrap();
            let (g, _) = l.minibatch_gradients(&ro, &[0, 1, 2, 3], &only_pi).unwrap();
            let est: f64 = l
                .nets
                .estimator_params()
                .iter()
                .map(|&i| g[i].data().iter().map(|x| x.abs() as f64).sum::<f64>())
                .sum();
            assert_eq!(est == 0.0, expect_zero, "{v}: {est}");
        }
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut l = Learner::new(tiny(Variant::Wmr)).unwrap();
            let a = l.train_iteration().unwrap().csv_row();
            let b = l.train_iteration().unwrap().csv_row();
            (a, b, l.nets.store.to_bytes())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn audit_reports_cutoff_state() {
        let a = Learner::new(tiny(Variant::Wmr)).unwrap().wiring_audit().unwrap();
        assert!(a.contains("stop_gradient_nodes=1") && a.contains("cutoff enabled"), "{a}");
        let b = Learner::new(tiny(Variant::NoCutoff)).unwrap().wiring_audit().unwrap();
        assert!(b.contains("stop_gradient_nodes=0") && b.contains("cutoff disabled"), "{b}");
        let c = Learner::new(tiny(Variant::PpoOnly)).unwrap().wiring_audit().unwrap();
        assert!(c.contains("policy_input=27"), "{c}");
    }
}
