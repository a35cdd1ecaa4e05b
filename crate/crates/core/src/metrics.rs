//! Evaluation episodes, per-step replay traces and cross-variant comparison.

use std::fmt::Write as _;

use wmr_autodiff::{Tape, Tensor};

use crate::config::{RunConfig, Variant};
use crate::env::{EnvOptions, EpisodeStats, VecEnv};
use crate::error::{Result, WmrError};
use crate::learner::{env_seed, Learner};
use crate::nets::{MemoryVars, Nets};
use crate::obs::{field_sq_errors, scale_into, FIELDS, OBS_DIM, WORLD_DIM};
use crate::reward::{N_TERMS, TERM_NAMES};

const EVAL_SALT: u64 = 0xE7A1_0000_0000_0003;

/// Format with six significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // Re-check after rounding up across a power of ten.
        let s = if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 6 && decimals > 0 {
            format!("{x:.prec$}", prec = decimals - 1)
        } else {
            s
        };
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub env: EnvOptions,
    /// Score the true world state as the estimate (zero-error oracle).
    pub oracle_recon: bool,
    /// Keep the per-step trace of env 0.
    pub record: bool,
}

/// Headline numbers of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub e_vel: f64,
    pub e_ang: f64,
    pub e_recon: f64,
    pub m_terrain: f64,
    pub m_reward: f64,
}

impl Summary {
    pub const CSV_HEADER: &'static str = "variant,seed,E_vel,E_ang,E_recon,M_terrain,M_reward";

    pub fn values(&self) -> [f64; 5] {
        [self.e_vel, self.e_ang, self.e_recon, self.m_terrain, self.m_reward]
    }

    pub fn csv_row(&self, variant: Variant, seed: u64) -> String {
        let mut s = format!("{variant},{seed}");
        for v in self.values() {
            s.push(',');
            s.push_str(&fmt_sig(v));
        }
        s
    }
}

/// One policy step of the recorded env.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub cmd: [f64; 3],
    /// Scaled true world state.
    pub truth: Vec<f32>,
    /// Scaled estimate; empty without an estimator.
    pub estimate: Vec<f32>,
    pub action: Vec<f32>,
    pub terms: [f64; N_TERMS],
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub summary: Summary,
    /// Per-field reconstruction MSE averaged over episodes.
    pub fields: [f64; FIELDS.len()],
    pub episodes: Vec<EpisodeStats>,
    pub trace: Vec<TraceRow>,
}

impl EvalResult {
    pub fn fields_csv(&self) -> String {
        let mut s = String::from("field,mse\n");
        for (f, v) in FIELDS.iter().zip(self.fields) {
            let _ = writeln!(s, "{},{}", f.name, fmt_sig(v));
        }
        s
    }
}

/// Run the deterministic (mean-action) policy for one episode in each of
/// `episodes` envs on the evaluation command source.
pub fn evaluate(
    cfg: &RunConfig,
    nets: &Nets,
    levels: Option<&[u32]>,
    episodes: usize,
    seed: u64,
    opts: EvalOptions,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(WmrError::Config("evaluation needs at least one episode".into()));
    }
    if nets.variant != cfg.variant {
        return Err(WmrError::Config(format!(
            "networks are for variant `{}` but the config asks for `{}`",
            nets.variant, cfg.variant
        )));
    }
    let k = episodes;
    let mut env =
        VecEnv::with_options(cfg, k, env_seed(seed ^ EVAL_SALT, 0), cfg.env.command.eval_source, levels, opts.env)?;
    let estimator = nets.variant.has_estimator();
    let act = nets.dims.act;
    let mut memory = nets.zero_memory(k);
    let mut obs = vec![0.0f32; k * OBS_DIM];
    let mut world = vec![0.0f32; k * WORLD_DIM];
    let fill = |raw: &[f64], dim: usize, out: &mut [f32]| {
        for (r, o) in raw.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
            scale_into(r, o);
        }
    };
    fill(&env.obs(), OBS_DIM, &mut obs);
    fill(&env.world(), WORLD_DIM, &mut world);

    let mut active = vec![true; k];
    let mut field_sum = vec![[0.0f64; FIELDS.len()]; k];
    let mut done: Vec<Option<EpisodeStats>> = vec![None; k];
    let mut field_ep = vec![[0.0f64; FIELDS.len()]; k];
    let mut trace = Vec::new();
    let cap = cfg.episode_steps() + 1;
    for step in 0..cap {
        if !active.iter().any(|&a| a) {
            break;
        }
        let mut tape = Tape::new();
        let p = nets.store.bind_frozen(&mut tape);
        let mv = MemoryVars::constant(&mut tape, &memory);
        let o = tape.constant(Tensor::matrix(k, OBS_DIM, obs.clone())?);
        let w = tape.constant(Tensor::matrix(k, WORLD_DIM, world.clone())?);
        let (sv, next) = nets.step(&mut tape, &p, o, w, &mv)?;
        let actions = tape.value(sv.mean).data().to_vec();
        let estimate = tape.value(sv.policy_input).data();
        for e in 0..k {
            if !active[e] {
                continue;
            }
            let truth = &world[e * WORLD_DIM..(e + 1) * WORLD_DIM];
            let pred =
                if opts.oracle_recon || !estimator { truth } else { &estimate[e * WORLD_DIM..(e + 1) * WORLD_DIM] };
            for (acc, v) in field_sum[e].iter_mut().zip(field_sq_errors(pred, truth)) {
                *acc += v;
            }
        }
        let est_row0 = if estimator { estimate[..WORLD_DIM].to_vec() } else { Vec::new() };
        memory = next.read(&tape);

        let batch = env.step(&actions)?;
        if opts.record && active[0] {
            let b = &batch.breakdown[0];
            trace.push(TraceRow {
                t: step as f64 * crate::env::POLICY_DT,
                cmd: batch.cmd[0].as_array(),
                truth: world[..WORLD_DIM].to_vec(),
                estimate: est_row0,
                action: actions[..act].to_vec(),
                terms: b.terms,
                total: b.total,
            });
        }
        for ep in &batch.episodes {
            if active[ep.env] {
                active[ep.env] = false;
                let len = ep.len.max(1) as f64;
                for (f, s) in field_ep[ep.env].iter_mut().zip(field_sum[ep.env]) {
                    *f = s / len;
                }
                done[ep.env] = Some(*ep);
            }
        }
        let starts: Vec<bool> = batch.done.iter().map(|d| d.is_done()).collect();
        memory.reset_rows(&starts);
        fill(&batch.obs, OBS_DIM, &mut obs);
        fill(&batch.world, WORLD_DIM, &mut world);
    }
    let eps: Vec<EpisodeStats> = done
        .into_iter()
        .enumerate()
        .map(|(e, d)| d.ok_or_else(|| WmrError::Numerical(format!("evaluation env {e} never finished its episode"))))
        .collect::<Result<_>>()?;
    let n = eps.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeStats) -> f64| eps.iter().map(f).sum::<f64>() / n;
    let mut fields = [0.0; FIELDS.len()];
    for (i, f) in fields.iter_mut().enumerate() {
        *f = if estimator || opts.oracle_recon { field_ep.iter().map(|r| r[i]).sum::<f64>() / n } else { f64::NAN };
    }
    let e_recon = fields.iter().sum::<f64>() / FIELDS.len() as f64;
    Ok(EvalResult {
        summary: Summary {
            e_vel: mean(&|e| e.e_vel),
            e_ang: mean(&|e| e.e_ang),
            e_recon,
            m_terrain: mean(&|e| e.level as f64),
            m_reward: mean(&|e| e.ret),
        },
        fields,
        episodes: eps,
        trace,
    })
}

/// Per-step CSV of a recorded episode.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("t,cmd_vx,cmd_vy,cmd_wz");
    let names: Vec<String> = FIELDS
        .iter()
        .flat_map(|f| (0..f.len).map(move |i| if f.len == 1 { f.name.to_string() } else { format!("{}_{i}", f.name) }))
        .collect();
    let has_est = rows.first().is_some_and(|r| !r.estimate.is_empty());
    for n in &names {
        let _ = write!(s, ",true_{n}");
    }
    if has_est {
        for n in &names {
            let _ = write!(s, ",est_{n}");
        }
    }
    let act = rows.first().map_or(0, |r| r.action.len());
    for j in 0..act {
        let _ = write!(s, ",action_{j}");
    }
    for t in TERM_NAMES {
        let _ = write!(s, ",r_{t}");
    }
    s.push_str(",reward\n");
    for r in rows {
        let _ = write!(s, "{}", fmt_sig(r.t));
        for c in r.cmd {
            let _ = write!(s, ",{}", fmt_sig(c));
        }
        for v in r.truth.iter().chain(&r.estimate).chain(&r.action) {
            let _ = write!(s, ",{}", fmt_sig(*v as f64));
        }
        for v in r.terms.iter().chain([&r.total]) {
            let _ = write!(s, ",{v:e}");
        }
        s.push('\n');
    }
    s
}

/// One trained-and-evaluated cell of a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    /// Position of the variant in the requested list.
    pub slot: usize,
    pub variant: Variant,
    pub seed: u64,
    pub result: std::result::Result<Summary, String>,
}

/// Train every `(variant, seed)` for `cfg.iters` iterations and evaluate on
/// the shared evaluation source. A failing cell is recorded, not fatal.
pub fn compare(cfg: &RunConfig, variants: &[Variant], seeds: &[u64], log: &mut dyn FnMut(&str)) -> Vec<CompareRow> {
    let mut rows = Vec::new();
    for (slot, &variant) in variants.iter().enumerate() {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.variant = variant;
            c.seed = seed;
            let result = (|| -> Result<Summary> {
                let mut l = Learner::new(c.clone())?;
                log(&l.wiring_audit()?);
                for _ in 0..c.iters {
                    let it = l.train_iteration()?;
                    log(&format!("[{variant} seed {seed}] {}", it.summary()));
                }
                let levels = l.levels();
                Ok(evaluate(&c, &l.nets, Some(&levels), c.eval.episodes, seed, EvalOptions::default())?.summary)
            })();
            if let Err(e) = &result {
                log(&format!("[{variant} seed {seed}] failed: {e}"));
            }
            rows.push(CompareRow { slot, variant, seed, result: result.map_err(|e| e.to_string()) });
        }
    }
    rows
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = format!("{}\n", Summary::CSV_HEADER);
    for r in rows {
        match &r.result {
            Ok(m) => s.push_str(&m.csv_row(r.variant, r.seed)),
            Err(_) => {
                let _ = write!(s, "{},{},nan,nan,nan,nan,nan", r.variant, r.seed);
            }
        }
        s.push('\n');
    }
    s
}

pub fn failures_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("variant,seed,error\n");
    for r in rows {
        if let Err(e) = &r.result {
            let _ = writeln!(s, "{},{},\"{}\"", r.variant, r.seed, e.replace('"', "'"));
        }
    }
    s
}

/// Per-seed differences of each listed variant against the first one.
pub fn paired_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("variant,baseline,seed,dE_vel,dE_ang,dE_recon,dM_terrain,dM_reward\n");
    let Some(base) = rows.iter().find(|r| r.slot == 0).map(|r| r.variant) else { return s };
    for r in rows.iter().filter(|r| r.slot != 0) {
        let b = rows.iter().find(|b| b.slot == 0 && b.seed == r.seed);
        if let (Ok(m), Some(Ok(bm))) = (&r.result, b.map(|b| &b.result)) {
            let _ = write!(s, "{},{},{}", r.variant, base, r.seed);
            for (x, y) in m.values().iter().zip(bm.values()) {
                let _ = write!(s, ",{}", fmt_sig(x - y));
            }
            s.push('\n');
        }
    }
    s
}
