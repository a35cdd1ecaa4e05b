//! Reconstruction, policy and value losses, and advantage estimation.

use wmr_autodiff::{Tape, Tensor, Var};

use crate::config::PpoConfig;
use crate::error::{Result, WmrError};
use crate::nets::PROB_EPS;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub cont: f32,
    pub dis: f32,
    pub reg: f32,
    pub value: f32,
    pub policy: f32,
    pub entropy: f32,
    pub clip: f32,
}

impl LossWeights {
    pub fn from_config(p: &PpoConfig) -> Self {
        Self {
            cont: p.lambda_cont as f32,
            dis: p.lambda_dis as f32,
            reg: p.lambda_reg as f32,
            value: p.lambda_v as f32,
            policy: p.lambda_pi as f32,
            entropy: p.entropy as f32,
            clip: p.clip as f32,
        }
    }
}

/// Tape handles of the reconstruction loss and its parts.
#[derive(Clone, Copy, Debug)]
pub struct ReconLoss {
    pub total: Var,
    pub mse: Var,
    pub bce: Var,
    pub l1: Var,
}

/// `λ_cont·MSE + λ_dis·BCE + λ_reg·L1`.
///
/// MSE and BCE average over every scalar entry; L1 sums `|z|` over latent
/// dimensions and averages over rows.
pub fn reconstruction_loss(
    tape: &mut Tape,
    cont: Var,
    prob: Var,
    latent: Var,
    target_cont: &Tensor,
    target_contact: &Tensor,
    w: &LossWeights,
) -> Result<ReconLoss> {
    if let Some(y) = target_contact.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(WmrError::Numerical(format!("contact target {y} is not 0 or 1")));
    }
    let c = tape.constant(target_cont.clone());
    let diff = tape.sub(cont, c)?;
    let sq = tape.square(diff)?;
    let mse = tape.mean(sq)?;

    let p = tape.clamp(prob, PROB_EPS, 1.0 - PROB_EPS)?;
    let y = tape.constant(target_contact.clone());
    let not_y = tape.constant(Tensor::new(
        target_contact.shape().to_vec(),
        target_contact.data().iter().map(|v| 1.0 - v).collect(),
    )?);
    let log_p = tape.log(p)?;
    let neg_p = tape.neg(p)?;
    let one_minus = tape.add_scalar(neg_p, 1.0)?;
    let log_q = tape.log(one_minus)?;
    let a = tape.mul(y, log_p)?;
    let b = tape.mul(not_y, log_q)?;
    let ll = tape.add(a, b)?;
    let ll = tape.mean(ll)?;
    let bce = tape.neg(ll)?;

    let rows = tape.value(latent).rows().max(1);
    let abs = tape.abs(latent)?;
    let s = tape.sum(abs)?;
    let l1 = tape.scale(s, 1.0 / rows as f32)?;

    let t1 = tape.scale(mse, w.cont)?;
    let t2 = tape.scale(bce, w.dis)?;
    let t3 = tape.scale(l1, w.reg)?;
    let t12 = tape.add(t1, t2)?;
    let total = tape.add(t12, t3)?;
    Ok(ReconLoss { total, mse, bce, l1 })
}

/// Negated clipped surrogate minus the entropy bonus. `logp` is `[B,1]`;
/// `entropy` the scalar mean entropy.
pub fn ppo_policy_loss(
    tape: &mut Tape,
    logp: Var,
    old_logp: &Tensor,
    adv: &Tensor,
    entropy: Var,
    clip: f32,
    entropy_coef: f32,
) -> Result<(Var, Var)> {
    let old = tape.constant(old_logp.clone());
    let a = tape.constant(adv.clone());
    let d = tape.sub(logp, old)?;
    let ratio = tape.exp(d).map_err(|e| WmrError::Numerical(format!("policy ratio: {e}")))?;
    let s1 = tape.mul(ratio, a)?;
    let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip)?;
    let s2 = tape.mul(clipped, a)?;
    let obj = tape.minimum(s1, s2)?;
    let obj = tape.mean(obj)?;
    let ent = tape.scale(entropy, entropy_coef)?;
    let gain = tape.add(obj, ent)?;
    Ok((tape.neg(gain)?, ratio))
}

pub fn value_loss(tape: &mut Tape, v: Var, returns: &Tensor) -> Result<Var> {
    let r = tape.constant(returns.clone());
    let d = tape.sub(v, r)?;
    let sq = tape.square(d)?;
    Ok(tape.mean(sq)?)
}

/// How a step ended. A timed-out step carries the value of its final state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepEnd {
    Running,
    Terminated,
    TimedOut(f64),
}

/// Generalized advantage estimation over one env's segment.
///
/// The successor value is `values[t+1]` (or `bootstrap` at the end) while
/// running, zero after termination and the stored final-state value after a
/// timeout. The recursion restarts at every episode boundary.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    ends: &[StepEnd],
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || ends.len() != n {
        return Err(WmrError::Numerical(format!(
            "gae length mismatch: {} rewards, {} values, {} ends",
            n,
            values.len(),
            ends.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let (next_v, carry) = match ends[t] {
            StepEnd::Running => (if t + 1 < n { values[t + 1] } else { bootstrap }, 1.0),
            StepEnd::Terminated => (0.0, 0.0),
            StepEnd::TimedOut(v) => (v, 0.0),
        };
        let delta = rewards[t] + gamma * next_v - values[t];
        adv[t] = delta + gamma * lam * carry * next_adv;
        next_adv = adv[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shift to zero mean and scale to unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len().max(1) as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in adv {
        *a = (*a - mean) / std;
    }
}
