use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
envs = 4
ppo.steps = 8
ppo.epochs = 2
ppo.minibatches = 2
net.enc_hidden = 8
net.dec_hidden = 8
net.pol_hidden = 8
net.mlp1 = 8
net.mlp2 = 8
eval.episodes = 2
env.episode_s = 1.0
checkpoint_every = 1
";

fn wmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmr")).args(args).output().expect("run wmr")
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    std::fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

fn train(dir: &Path, name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = tiny_config(dir);
    let out = dir.join(name);
    let o = out.to_string_lossy().into_owned();
    let mut args = vec!["train", "--config", &cfg, "--seed", "5", "--out", &o];
    if !extra.contains(&"--iters") {
        args.extend_from_slice(&["--iters", "2"]);
    }
    args.extend_from_slice(extra);
    (wmr(&args), out)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_twice_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, da) = train(dir.path(), "a", &[]);
    let (b, db) = train(dir.path(), "b", &[]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(b.status.success(), "{}", stderr(&b));
    for f in ["final.wmr", "ckpt_000001.wmr", "metrics.csv", "recon_breakdown.csv", "train_log_000000.csv"] {
        assert_eq!(std::fs::read(da.join(f)).unwrap(), std::fs::read(db.join(f)).unwrap(), "{f}");
    }
    let text = stdout(&a);
    assert_eq!(text.matches("# effective configuration").count(), 1);
    assert!(text.contains("cutoff enabled"));
    let metrics = std::fs::read_to_string(da.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("variant,seed,E_vel,E_ang,E_recon,M_terrain,M_reward\nwmr,5,"));
}

#[test]
fn no_cutoff_variant_is_audited() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = train(dir.path(), "nc", &["--variant", "no-cutoff", "--iters", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("wiring:")).unwrap().to_string();
    assert!(line.contains("variant=no-cutoff") && line.contains("cutoff disabled"), "{line}");
}

#[test]
fn bad_config_and_usage_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = train(dir.path(), "x", &["--set", "ppo.bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ppo.bogus"));
    let (o, _) = train(dir.path(), "y", &["--set", "ppo.clip=abc"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wmr(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    let o = wmr(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(wmr(&["--help"]).status.success());
}

#[test]
fn eval_replay_and_resume_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = train(dir.path(), "run", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = out.join("final.wmr").to_string_lossy().into_owned();

    let ev = dir.path().join("ev").to_string_lossy().into_owned();
    let o = wmr(&["eval", "--checkpoint", &ck, "--episodes", "3", "--seed", "2", "--out", &ev]);
    assert!(o.status.success(), "{}", stderr(&o));
    let breakdown = std::fs::read_to_string(Path::new(&ev).join("recon_breakdown.csv")).unwrap();
    assert_eq!(breakdown.lines().count(), 15);

    let r1 = dir.path().join("r1.csv").to_string_lossy().into_owned();
    let r2 = dir.path().join("r2.csv").to_string_lossy().into_owned();
    assert!(wmr(&["replay", "--checkpoint", &ck, "--seed", "4", "--out", &r1]).status.success());
    assert!(wmr(&["replay", "--checkpoint", &ck, "--seed", "4", "--out", &r2]).status.success());
    let t1 = std::fs::read_to_string(&r1).unwrap();
    assert_eq!(t1, std::fs::read_to_string(&r2).unwrap());
    let cols = t1.lines().next().unwrap().split(',').count();
    assert!(t1.lines().count() > 1);
    assert!(t1.lines().all(|l| l.split(',').count() == cols));

    let res = dir.path().join("res").to_string_lossy().into_owned();
    let o = wmr(&["train", "--resume", &ck, "--iters", "1", "--out", &res]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(Path::new(&res).join("train_log_000002.csv").exists());
    let o = wmr(&["train", "--resume", &ck, "--iters", "1", "--set", "net.pol_hidden=9", "--out", &res]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = wmr(&["eval", "--checkpoint", &r1]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_against_itself_has_zero_differences() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("ab").to_string_lossy().into_owned();
    let o =
        wmr(&["ablate", "--config", &cfg, "--iters", "1", "--variants", "wmr,wmr", "--seeds", "1,2", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let paired = std::fs::read_to_string(Path::new(&out).join("paired.csv")).unwrap();
    let rows: Vec<&str> = paired.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r.ends_with(",0,0,0,0,0"), "{r}");
    }
}
