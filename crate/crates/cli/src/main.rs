//! `wmr`: train, evaluate, compare and replay locomotion policies.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wmr_core::checkpoint::Checkpoint;
use wmr_core::config::{RunConfig, Variant};
use wmr_core::learner::{IterationLog, Learner};
use wmr_core::metrics::{compare, compare_csv, evaluate, failures_csv, paired_csv, trace_csv, EvalOptions};
use wmr_core::{Result, WmrError};

#[derive(Parser)]
#[command(name = "wmr", version, about = "World-model-reconstruction locomotion training")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one policy and write checkpoints, a training log and final metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the shared evaluation commands.
    Eval(EvalArgs),
    /// Train and evaluate several variants over several seeds.
    Ablate(AblateArgs),
    /// Write the per-step trace of one evaluation episode.
    Replay(ReplayArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// `default` or a `key = value` config file.
    #[arg(long, default_value = "default")]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    envs: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(&self.config)?;
        self.apply(&mut c)?;
        Ok(c)
    }

    fn apply(&self, c: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(n) = self.envs {
            c.envs = n;
        }
        if let Some(n) = self.iters {
            c.iters = n;
        }
        if let Some(v) = self.variant {
            c.variant = v;
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        for kv in &self.sets {
            c.apply_override(kv)?;
        }
        c.validate()
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Continue from a checkpoint; `--iters` counts additional iterations.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated variants; the first is the baseline of paired differences.
    #[arg(long, value_delimiter = ',', default_value = "wmr,no-cutoff,random-cmd,ppo-only")]
    variants: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs/replay.csv")]
    out: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn set_workers(n: usize) {
    if n > 0 {
        // Fails only if a pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn print_config(c: &RunConfig) {
    println!("# effective configuration");
    print!("{}", c.to_text());
    println!();
}

/// Config stored in a checkpoint with evaluation-only overrides applied.
fn eval_config(ck: &Checkpoint, sets: &[String]) -> Result<RunConfig> {
    let mut c = ck.config.clone();
    for kv in sets {
        c.apply_override(kv)?;
    }
    if c.net != ck.config.net || c.variant != ck.config.variant {
        return Err(WmrError::Config("overrides may not change the networks of a checkpoint".into()));
    }
    c.validate()?;
    Ok(c)
}

fn train(a: TrainArgs) -> Result<()> {
    let (mut learner, cfg) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut c = ck.config.clone();
            a.common.apply(&mut c)?;
            (ck.resume(c.clone())?, c)
        }
        None => {
            let c = a.common.config()?;
            (Learner::new(c.clone())?, c)
        }
    };
    set_workers(cfg.workers);
    print_config(&cfg);
    let out = &a.common.out;
    fs::create_dir_all(out)?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    println!("{}", learner.wiring_audit()?);

    let mut log = format!("{}\n", IterationLog::CSV_HEADER);
    let start = learner.iteration;
    for _ in 0..cfg.iters {
        let it = learner.train_iteration()?;
        println!("{}", it.summary());
        log.push_str(&it.csv_row());
        log.push('\n');
        if cfg.checkpoint_every > 0 && learner.iteration % cfg.checkpoint_every == 0 {
            Checkpoint::capture(&learner).save(&out.join(format!("ckpt_{:06}.wmr", learner.iteration)))?;
        }
    }
    write(&out.join(format!("train_log_{start:06}.csv")), &log)?;
    let ck = Checkpoint::capture(&learner);
    ck.save(&out.join("final.wmr"))?;

    let levels = learner.levels();
    let r = evaluate(&cfg, &learner.nets, Some(&levels), cfg.eval.episodes, cfg.seed, EvalOptions::default())?;
    let metrics = format!("{}\n{}\n", wmr_core::metrics::Summary::CSV_HEADER, r.summary.csv_row(cfg.variant, cfg.seed));
    write(&out.join("metrics.csv"), &metrics)?;
    write(&out.join("recon_breakdown.csv"), &r.fields_csv())?;
    print!("{metrics}");
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = eval_config(&ck, &a.sets)?;
    set_workers(cfg.workers);
    let nets = ck.nets()?;
    let episodes = a.episodes.unwrap_or(cfg.eval.episodes);
    let seed = a.seed.unwrap_or(cfg.seed);
    let r = evaluate(&cfg, &nets, Some(&ck.levels), episodes, seed, EvalOptions::default())?;
    let metrics = format!("{}\n{}\n", wmr_core::metrics::Summary::CSV_HEADER, r.summary.csv_row(cfg.variant, seed));
    write(&a.out.join("metrics.csv"), &metrics)?;
    write(&a.out.join("recon_breakdown.csv"), &r.fields_csv())?;
    print!("{metrics}");
    print!("{}", r.fields_csv());
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = a.common.config()?;
    set_workers(cfg.workers);
    print_config(&cfg);
    if a.variants.is_empty() || a.seeds.is_empty() {
        return Err(WmrError::Config("need at least one variant and one seed".into()));
    }
    let rows = compare(&cfg, &a.variants, &a.seeds, &mut |s| println!("{s}"));
    let out = &a.common.out;
    write(&out.join("comparison.csv"), &compare_csv(&rows))?;
    write(&out.join("paired.csv"), &paired_csv(&rows))?;
    write(&out.join("failures.csv"), &failures_csv(&rows))?;
    print!("{}", compare_csv(&rows));
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    if failed == rows.len() {
        return Err(WmrError::Numerical(format!("all {failed} runs failed")));
    }
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see failures.csv", rows.len());
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = eval_config(&ck, &a.sets)?;
    let nets = ck.nets()?;
    let opts = EvalOptions { record: true, ..Default::default() };
    let r = evaluate(&cfg, &nets, Some(&ck.levels), 1, a.seed, opts)?;
    write(&a.out, &trace_csv(&r.trace))?;
    let ep = &r.episodes[0];
    println!(
        "replayed {} steps, return {}, {}",
        ep.len,
        wmr_core::metrics::fmt_sig(ep.ret),
        if ep.terminated { "terminated" } else { "timed out" }
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match cli.cmd {
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Ablate(a) => ablate(a),
        Cmd::Replay(a) => replay(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
