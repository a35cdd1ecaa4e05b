//! Velocity commands: random piecewise-constant draws, a smooth synthetic
//! process, and playback of recorded root-velocity files.

use std::fmt::Display;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::config::CommandConfig;
use crate::error::{Result, WmrError};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Command {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl Command {
    pub fn new(vx: f64, vy: f64, wz: f64) -> Self {
        Self { vx, vy, wz }
    }

    pub fn lin_norm(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.vx, self.vy, self.wz]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CommandSource {
    Random,
    Synthetic,
    TrajectoryFile,
}

impl CommandSource {
    pub fn name(self) -> &'static str {
        match self {
            CommandSource::Random => "random",
            CommandSource::Synthetic => "synthetic",
            CommandSource::TrajectoryFile => "trajectory-file",
        }
    }
}

impl Display for CommandSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CommandSource {
    type Err = WmrError;
    fn from_str(s: &str) -> Result<Self> {
        [CommandSource::Random, CommandSource::Synthetic, CommandSource::TrajectoryFile]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| WmrError::Config(format!("unknown command source `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl Bounds {
    pub fn clamp(&self, c: Command) -> Command {
        Command::new(c.vx.clamp(-self.vx, self.vx), c.vy.clamp(-self.vy, self.vy), c.wz.clamp(-self.wz, self.wz))
    }

    pub fn contains(&self, c: &Command) -> bool {
        c.vx.abs() <= self.vx && c.vy.abs() <= self.vy && c.wz.abs() <= self.wz
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Command {
        let mut u = |m: f64| m * (2.0 * rng.random::<f64>() - 1.0);
        let vx = u(self.vx);
        let vy = u(self.vy);
        let wz = u(self.wz);
        Command::new(vx, vy, wz)
    }
}

/// Recorded `(t, vx, vy, wz)` rows with strictly increasing `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    rows: Vec<[f64; 4]>,
}

impl Trajectory {
    /// Parses the `t,vx,vy,wz` text format. Row numbers in errors are file line numbers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.split(',').map(str::trim).eq(["t", "vx", "vy", "wz"]) => {}
            Some((i, _)) => {
                return Err(WmrError::Trajectory { row: i + 1, msg: "expected header `t,vx,vy,wz`".into() })
            }
            None => return Err(WmrError::Trajectory { row: 1, msg: "empty file".into() }),
        }
        let mut rows: Vec<[f64; 4]> = Vec::new();
        for (i, line) in lines {
            let row = i + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(WmrError::Trajectory { row, msg: format!("expected 4 fields, got {}", fields.len()) });
            }
            let mut v = [0.0; 4];
            for (k, f) in fields.iter().enumerate() {
                v[k] = f
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| WmrError::Trajectory { row, msg: format!("bad number `{f}`") })?;
            }
            if let Some(prev) = rows.last() {
                if v[0] <= prev[0] {
                    return Err(WmrError::Trajectory { row, msg: "time is not increasing".into() });
                }
            }
            rows.push(v);
        }
        if rows.is_empty() {
            return Err(WmrError::Trajectory { row: 2, msg: "no data rows".into() });
        }
        Ok(Self { rows })
    }

    pub fn load(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| WmrError::Config(format!("cannot read {path}: {e}")))?;
        Self::parse(&text)
    }

    pub fn period(&self) -> f64 {
        self.rows[self.rows.len() - 1][0] - self.rows[0][0]
    }

    /// Linearly interpolated command at time `t`, looping over the recording.
    pub fn at(&self, t: f64) -> Command {
        let cmd = |r: &[f64; 4]| Command::new(r[1], r[2], r[3]);
        let period = self.period();
        if self.rows.len() == 1 || period <= 0.0 {
            return cmd(&self.rows[0]);
        }
        let t0 = self.rows[0][0];
        let tt = t0 + (t - t0).rem_euclid(period);
        let k = self.rows.partition_point(|r| r[0] <= tt).clamp(1, self.rows.len() - 1);
        let (a, b) = (&self.rows[k - 1], &self.rows[k]);
        let w = ((tt - a[0]) / (b[0] - a[0])).clamp(0.0, 1.0);
        Command::new(a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2]), a[3] + w * (b[3] - a[3]))
    }
}

/// Per-env command process.
#[derive(Clone, Debug)]
pub struct CommandGen {
    pub source: CommandSource,
    pub bounds: Bounds,
    resample_s: f64,
    tau_s: f64,
    trajectory: Option<Arc<Trajectory>>,
    current: Command,
    target: Command,
    next_resample: f64,
    phase: f64,
}

impl CommandGen {
    pub fn new(cfg: &CommandConfig, source: CommandSource, trajectory: Option<Arc<Trajectory>>) -> Result<Self> {
        if source == CommandSource::TrajectoryFile && trajectory.is_none() {
            return Err(WmrError::Config("command source trajectory-file needs command.trajectory_file".into()));
        }
        Ok(Self {
            source,
            bounds: Bounds { vx: cfg.max_vx, vy: cfg.max_vy, wz: cfg.max_yaw },
            resample_s: cfg.resample_s,
            tau_s: cfg.tau_s,
            trajectory,
            current: Command::default(),
            target: Command::default(),
            next_resample: 0.0,
            phase: 0.0,
        })
    }

    pub fn current(&self) -> Command {
        self.current
    }

    /// Start of an episode.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match self.source {
            CommandSource::Random => {
                self.current = self.bounds.draw(rng);
                self.next_resample = self.resample_s;
            }
            CommandSource::Synthetic => {
                self.current = Command::default();
                self.target = self.bounds.draw(rng);
                self.next_resample = self.resample_s * (0.5 + rng.random::<f64>());
            }
            CommandSource::TrajectoryFile => {
                let tr = self.trajectory.as_ref().expect("checked in new");
                self.phase = tr.period() * rng.random::<f64>();
                self.current = self.bounds.clamp(tr.at(self.phase));
            }
        }
    }

    /// Advance to episode time `t` after a step of `dt`.
    pub fn advance<R: Rng + ?Sized>(&mut self, t: f64, dt: f64, rng: &mut R) -> Command {
        match self.source {
            CommandSource::Random => {
                if t >= self.next_resample - 1e-9 {
                    self.current = self.bounds.draw(rng);
                    self.next_resample += self.resample_s;
                }
            }
            CommandSource::Synthetic => {
                if t >= self.next_resample {
                    self.target = self.bounds.draw(rng);
                    self.next_resample += self.resample_s * (0.5 + rng.random::<f64>());
                }
                let a = (dt / self.tau_s).min(1.0);
                let c = &mut self.current;
                c.vx += a * (self.target.vx - c.vx);
                c.vy += a * (self.target.vy - c.vy);
                c.wz += a * (self.target.wz - c.wz);
                self.current = self.bounds.clamp(self.current);
            }
            CommandSource::TrajectoryFile => {
                let tr = self.trajectory.as_ref().expect("checked in new");
                self.current = self.bounds.clamp(tr.at(self.phase + t));
            }
        }
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> CommandConfig {
        RunConfig::default().env.command
    }

    fn schedule(source: CommandSource, seed: u64, traj: Option<Arc<Trajectory>>) -> Vec<Command> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = CommandGen::new(&cfg(), source, traj).unwrap();
        g.reset(&mut rng);
        (1..=2000).map(|k| g.advance(k as f64 * 0.02, 0.02, &mut rng)).collect()
    }

    #[test]
    fn single_row_file_is_constant() {
        let tr = Arc::new(Trajectory::parse("t,vx,vy,wz\n0,0.5,0,0\n").unwrap());
        for c in schedule(CommandSource::TrajectoryFile, 3, Some(tr)) {
            assert_eq!(c, Command::new(0.5, 0.0, 0.0));
        }
    }

    #[test]
    fn playback_interpolates_and_loops() {
        let tr = Trajectory::parse("t,vx,vy,wz\n0,0,0,0\n1,1,0.5,-1\n2,0,0,0\n").unwrap();
        assert_eq!(tr.at(0.5), Command::new(0.5, 0.25, -0.5));
        assert_eq!(tr.at(1.0), Command::new(1.0, 0.5, -1.0));
        assert!((tr.at(2.5).vx - 0.5).abs() < 1e-12);
        assert!((tr.at(-0.25).vx - 0.25).abs() < 1e-12);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let row = |text: &str| match Trajectory::parse(text) {
            Err(WmrError::Trajectory { row, .. }) => row,
            other => panic!("{other:?}"),
        };
        assert_eq!(row("time,vx,vy,wz\n0,0,0,0\n"), 1);
        assert_eq!(row("t,vx,vy,wz\n0,0,0,0\n1,0,zero,0\n"), 3);
        assert_eq!(row("t,vx,vy,wz\n0,0,0,0\n0,1,0,0\n"), 3);
        assert_eq!(row("t,vx,vy,wz\n0,0,0\n"), 2);
        assert_eq!(row("t,vx,vy,wz\n"), 2);
    }

    #[test]
    fn random_schedule_is_seed_deterministic_and_piecewise_constant() {
        let a = schedule(CommandSource::Random, 9, None);
        assert_eq!(a, schedule(CommandSource::Random, 9, None));
        assert_ne!(a, schedule(CommandSource::Random, 10, None));
        let changes = a.windows(2).filter(|w| w[0] != w[1]).count();
        // 40 s at a 5 s period.
        assert_eq!(changes, 8);
    }

    #[test]
    fn synthetic_commands_are_bounded_and_smooth() {
        let c = cfg();
        let b = Bounds { vx: c.max_vx, vy: c.max_vy, wz: c.max_yaw };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = CommandGen::new(&c, CommandSource::Synthetic, None).unwrap();
        g.reset(&mut rng);
        let mut prev = g.current();
        let mut total = 0.0;
        for k in 1..=10_000 {
            let cmd = g.advance(k as f64 * 0.02, 0.02, &mut rng);
            assert!(b.contains(&cmd));
            assert!(cmd.lin_norm() <= 1.5 && cmd.wz.abs() <= 1.5);
            total += (cmd.vx - prev.vx).hypot(cmd.vy - prev.vy);
            prev = cmd;
        }
        assert!(total / 10_000.0 < 0.05, "mean delta {}", total / 10_000.0);
    }

    #[test]
    fn trajectory_source_requires_a_file() {
        assert!(CommandGen::new(&cfg(), CommandSource::TrajectoryFile, None).is_err());
        assert_eq!("trajectory-file".parse::<CommandSource>().unwrap(), CommandSource::TrajectoryFile);
    }
}
