//! Estimator, policy and value networks on the autodiff tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use wmr_autodiff::{linear, lstm_cell, LstmState, LstmVars, ParamStore, Tape, Tensor, Var};
use wmr_sim::N_JOINTS;

use crate::config::{NetConfig, Variant};
use crate::error::{Result, WmrError};
use crate::obs::{CONTACT_START, CONT_DIM, OBS_DIM, WORLD_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetDims {
    pub obs: usize,
    pub world: usize,
    pub cont: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub pol_in: usize,
    pub pol_hidden: usize,
    pub mlp1: usize,
    pub mlp2: usize,
    pub act: usize,
}

impl NetDims {
    pub fn new(cfg: &NetConfig, variant: Variant) -> Self {
        Self {
            obs: OBS_DIM,
            world: WORLD_DIM,
            cont: CONT_DIM,
            enc_hidden: cfg.enc_hidden,
            dec_hidden: cfg.dec_hidden,
            pol_in: if variant.has_estimator() { WORLD_DIM } else { OBS_DIM },
            pol_hidden: cfg.pol_hidden,
            mlp1: cfg.mlp1,
            mlp2: cfg.mlp2,
            act: N_JOINTS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LstmIdx {
    w_ih: usize,
    w_hh: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LinIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    encoder: Option<LstmIdx>,
    dec_cont: Option<[LinIdx; 2]>,
    dec_disc: Option<[LinIdx; 2]>,
    policy: LstmIdx,
    policy_mlp: [LinIdx; 3],
    log_std: usize,
    value: LstmIdx,
    value_mlp: [LinIdx; 3],
}

/// Parameters of the whole learner plus their wiring.
#[derive(Clone, Debug, PartialEq)]
pub struct Nets {
    pub store: ParamStore,
    pub dims: NetDims,
    pub variant: Variant,
    pub log_std_range: (f32, f32),
    layout: Layout,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| bound * (2.0 * rng.random::<f32>() - 1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

fn add_lstm(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> LstmIdx {
    let k = 1.0 / (hidden as f32).sqrt();
    let w_ih = store.add(format!("{name}.w_ih"), uniform(rng, &[input, 4 * hidden], k)).0;
    let w_hh = store.add(format!("{name}.w_hh"), uniform(rng, &[hidden, 4 * hidden], k)).0;
    let bias = store.add(format!("{name}.bias"), uniform(rng, &[4 * hidden], k)).0;
    LstmIdx { w_ih, w_hh, bias }
}

fn add_linear(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    input: usize,
    output: usize,
    gain: f32,
) -> LinIdx {
    let k = 1.0 / (input as f32).sqrt();
    let w = store.add(format!("{name}.w"), uniform(rng, &[input, output], gain * k)).0;
    let b = store.add(format!("{name}.b"), uniform(rng, &[output], gain * k)).0;
    LinIdx { w, b }
}

/// Recurrent state of every network for a batch of envs.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory {
    pub encoder: Option<LstmState>,
    pub policy: LstmState,
    pub value: LstmState,
}

impl Memory {
    pub fn reset_rows(&mut self, mask: &[bool]) {
        if let Some(e) = &mut self.encoder {
            e.reset_rows(mask);
        }
        self.policy.reset_rows(mask);
        self.value.reset_rows(mask);
    }

    pub fn gather(&self, idx: &[usize]) -> Self {
        Self {
            encoder: self.encoder.as_ref().map(|e| e.gather(idx)),
            policy: self.policy.gather(idx),
            value: self.value.gather(idx),
        }
    }
}

/// Tape handles of a recurrent state.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
}

impl StateVars {
    pub fn constant(tape: &mut Tape, s: &LstmState) -> Self {
        Self { h: tape.constant(s.hidden.clone()), c: tape.constant(s.cell.clone()) }
    }

    pub fn read(&self, tape: &Tape) -> LstmState {
        LstmState { hidden: tape.value(self.h).clone(), cell: tape.value(self.c).clone() }
    }

    /// Multiply both halves by a `[B,H]` 0/1 mask (episode starts).
    pub fn masked(&self, tape: &mut Tape, mask: Var) -> Result<Self> {
        Ok(Self { h: tape.mul(self.h, mask)?, c: tape.mul(self.c, mask)? })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MemoryVars {
    pub encoder: Option<StateVars>,
    pub policy: StateVars,
    pub value: StateVars,
}

impl MemoryVars {
    pub fn constant(tape: &mut Tape, m: &Memory) -> Self {
        Self {
            encoder: m.encoder.as_ref().map(|e| StateVars::constant(tape, e)),
            policy: StateVars::constant(tape, &m.policy),
            value: StateVars::constant(tape, &m.value),
        }
    }

    pub fn read(&self, tape: &Tape) -> Memory {
        Memory {
            encoder: self.encoder.map(|e| e.read(tape)),
            policy: self.policy.read(tape),
            value: self.value.read(tape),
        }
    }
}

/// Outputs of one recurrent step for a batch.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    /// Continuous reconstruction `[B, cont]`.
    pub recon_cont: Option<Var>,
    /// Contact probabilities `[B, 2]`, clamped inside (0,1).
    pub recon_contact: Option<Var>,
    /// Encoder output `[B, enc_hidden]`.
    pub latent: Option<Var>,
    /// Policy input after the cutoff node.
    pub policy_input: Var,
    /// Action mean `[B, act]`.
    pub mean: Var,
    /// State value `[B, 1]`.
    pub value: Var,
}

pub const PROB_EPS: f32 = 1e-7;

impl Nets {
    pub fn new(cfg: &NetConfig, variant: Variant, rng: &mut ChaCha8Rng) -> Self {
        let dims = NetDims::new(cfg, variant);
        let mut store = ParamStore::new();
        let (encoder, dec_cont, dec_disc) = if variant.has_estimator() {
            let enc = add_lstm(&mut store, rng, "estimator.encoder", dims.obs, dims.enc_hidden);
            let c0 = add_linear(&mut store, rng, "estimator.cont.0", dims.enc_hidden, dims.dec_hidden, 1.0);
            let c1 = add_linear(&mut store, rng, "estimator.cont.1", dims.dec_hidden, dims.cont, 1.0);
            let d0 = add_linear(&mut store, rng, "estimator.disc.0", dims.enc_hidden, dims.dec_hidden, 1.0);
            let d1 = add_linear(&mut store, rng, "estimator.disc.1", dims.dec_hidden, 2, 1.0);
            (Some(enc), Some([c0, c1]), Some([d0, d1]))
        } else {
            (None, None, None)
        };
        let policy = add_lstm(&mut store, rng, "policy.lstm", dims.pol_in, dims.pol_hidden);
        let policy_mlp = [
            add_linear(&mut store, rng, "policy.mlp.0", dims.pol_hidden, dims.mlp1, 1.0),
            add_linear(&mut store, rng, "policy.mlp.1", dims.mlp1, dims.mlp2, 1.0),
            add_linear(&mut store, rng, "policy.mlp.2", dims.mlp2, dims.act, 0.01),
        ];
        let log_std = store.add("policy.log_std", Tensor::full(&[dims.act], cfg.init_log_std as f32)).0;
        let value = add_lstm(&mut store, rng, "value.lstm", dims.world, dims.pol_hidden);
        let value_mlp = [
            add_linear(&mut store, rng, "value.mlp.0", dims.pol_hidden, dims.mlp1, 1.0),
            add_linear(&mut store, rng, "value.mlp.1", dims.mlp1, dims.mlp2, 1.0),
            add_linear(&mut store, rng, "value.mlp.2", dims.mlp2, 1, 1.0),
        ];
        Self {
            store,
            dims,
            variant,
            log_std_range: (cfg.min_log_std as f32, cfg.max_log_std as f32),
            layout: Layout { encoder, dec_cont, dec_disc, policy, policy_mlp, log_std, value, value_mlp },
        }
    }

    /// Swap in stored parameters after checking names and shapes.
    pub fn load_store(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(WmrError::Checkpoint(format!(
                "parameter count {} does not match the configured networks ({})",
                store.len(),
                self.store.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in self.store.iter().zip(store.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(WmrError::Checkpoint(format!(
                    "parameter `{n2}` {:?} does not match `{n1}` {:?}",
                    t2.shape(),
                    t1.shape()
                )));
            }
        }
        self.store = store;
        Ok(())
    }

    /// Indices of parameters that belong to the estimator.
    pub fn estimator_params(&self) -> Vec<usize> {
        (0..self.store.len()).filter(|&i| self.store.name(i).starts_with("estimator.")).collect()
    }

    pub fn policy_params(&self) -> Vec<usize> {
        (0..self.store.len()).filter(|&i| self.store.name(i).starts_with("policy.")).collect()
    }

    pub fn value_params(&self) -> Vec<usize> {
        (0..self.store.len()).filter(|&i| self.store.name(i).starts_with("value.")).collect()
    }

    pub fn zero_memory(&self, batch: usize) -> Memory {
        Memory {
            encoder: self.variant.has_estimator().then(|| LstmState::zeros(batch, self.dims.enc_hidden)),
            policy: LstmState::zeros(batch, self.dims.pol_hidden),
            value: LstmState::zeros(batch, self.dims.pol_hidden),
        }
    }

    fn lstm(&self, p: &[Var], i: LstmIdx) -> LstmVars {
        LstmVars { w_ih: p[i.w_ih], w_hh: p[i.w_hh], bias: p[i.bias] }
    }

    fn decoder(&self, tape: &mut Tape, p: &[Var], z: Var, l: &[LinIdx; 2]) -> Result<Var> {
        let x = tape.elu(z)?;
        let x = linear(tape, x, p[l[0].w], p[l[0].b])?;
        let x = tape.elu(x)?;
        Ok(linear(tape, x, p[l[1].w], p[l[1].b])?)
    }

    fn head(&self, tape: &mut Tape, p: &[Var], h: Var, l: &[LinIdx; 3]) -> Result<Var> {
        let mut x = h;
        for lin in l {
            x = tape.elu(x)?;
            x = linear(tape, x, p[lin.w], p[lin.b])?;
        }
        Ok(x)
    }

    /// Clamped log standard deviation broadcast to `[rows, act]`.
    pub fn log_std(&self, tape: &mut Tape, p: &[Var], rows: usize) -> Result<Var> {
        let zeros = tape.constant(Tensor::zeros(&[rows, self.dims.act]));
        let ls = tape.add_bias(zeros, p[self.layout.log_std])?;
        Ok(tape.clamp(ls, self.log_std_range.0, self.log_std_range.1)?)
    }

    /// One recurrent step. `obs` is the scaled observation `[B, obs]`, `world`
    /// the scaled true world state `[B, world]` for the critic.
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &[Var],
        obs: Var,
        world: Var,
        mem: &MemoryVars,
    ) -> Result<(StepVars, MemoryVars)> {
        let l = &self.layout;
        let mut next = *mem;
        let (recon_cont, recon_contact, latent, policy_input) = match (l.encoder, mem.encoder) {
            (Some(enc), Some(es)) => {
                let (h, c) = lstm_cell(tape, obs, es.h, es.c, self.lstm(p, enc))?;
                next.encoder = Some(StateVars { h, c });
                let cont = self.decoder(tape, p, h, l.dec_cont.as_ref().expect("estimator"))?;
                let logits = self.decoder(tape, p, h, l.dec_disc.as_ref().expect("estimator"))?;
                let prob = tape.sigmoid(logits)?;
                let prob = tape.clamp(prob, PROB_EPS, 1.0 - PROB_EPS)?;
                let front = tape.slice_cols(cont, 0, CONTACT_START)?;
                let back = tape.slice_cols(cont, CONTACT_START, self.dims.cont - CONTACT_START)?;
                let full = tape.concat_cols(&[front, prob, back])?;
                let cut = if self.variant.cutoff() { tape.stop_gradient(full)? } else { tape.identity(full)? };
                (Some(cont), Some(prob), Some(h), cut)
            }
            _ => (None, None, None, obs),
        };
        let (ph, pc) = lstm_cell(tape, policy_input, mem.policy.h, mem.policy.c, self.lstm(p, l.policy))?;
        next.policy = StateVars { h: ph, c: pc };
        let mean = self.head(tape, p, ph, &l.policy_mlp)?;
        let (vh, vc) = lstm_cell(tape, world, mem.value.h, mem.value.c, self.lstm(p, l.value))?;
        next.value = StateVars { h: vh, c: vc };
        let value = self.head(tape, p, vh, &l.value_mlp)?;
        Ok((StepVars { recon_cont, recon_contact, latent, policy_input, mean, value }, next))
    }

    /// Critic alone: one step from `state` on the scaled `world` batch.
    pub fn value_only(&self, tape: &mut Tape, p: &[Var], world: Var, state: StateVars) -> Result<Var> {
        let l = &self.layout;
        let (vh, _) = lstm_cell(tape, world, state.h, state.c, self.lstm(p, l.value))?;
        self.head(tape, p, vh, &l.value_mlp)
    }
}

/// Diagonal Gaussian log-density of `action` per row, `[B,1]`.
pub fn gaussian_log_prob(tape: &mut Tape, mean: Var, log_std: Var, action: Var) -> Result<Var> {
    let act = tape.value(mean).cols();
    let diff = tape.sub(action, mean)?;
    let neg_ls = tape.neg(log_std)?;
    let inv_std = tape.exp(neg_ls)?;
    let z = tape.mul(diff, inv_std)?;
    let z2 = tape.square(z)?;
    let half = tape.scale(z2, -0.5)?;
    let per = tape.sub(half, log_std)?;
    let row = tape.sum_cols(per)?;
    Ok(tape.add_scalar(row, -0.5 * act as f32 * (2.0 * std::f32::consts::PI).ln())?)
}

/// Mean entropy per row of the diagonal Gaussian.
pub fn gaussian_entropy(tape: &mut Tape, log_std: Var) -> Result<Var> {
    let act = tape.value(log_std).cols();
    let row = tape.sum_cols(log_std)?;
    let row = tape.add_scalar(row, act as f32 * 0.5 * (1.0 + (2.0 * std::f32::consts::PI).ln()))?;
    Ok(tape.mean(row)?)
}
