//! Binary checkpoints: config, parameters, optimizer state, curriculum.
//!
//! Layout (little endian): magic `WMR1`, u32 format version, then
//! length-prefixed strings/blobs in a fixed order. See [`Checkpoint::to_bytes`].

use std::path::Path;

use wmr_autodiff::{AdamState, ParamStore};

use crate::config::RunConfig;
use crate::error::{Result, WmrError};
use crate::learner::Learner;
use crate::nets::Nets;

const MAGIC: &[u8; 4] = b"WMR1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub code_version: String,
    pub config: RunConfig,
    pub iteration: usize,
    pub params: ParamStore,
    pub adam: AdamState,
    pub levels: Vec<u32>,
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| WmrError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| WmrError::Checkpoint(e.to_string()))
    }
    fn floats(&mut self) -> Result<Vec<f32>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| WmrError::Checkpoint("length overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_floats(out: &mut Vec<u8>, v: &[f32]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn capture(l: &Learner) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: l.cfg.clone(),
            iteration: l.iteration,
            params: l.nets.store.clone(),
            adam: l.adam.clone(),
            levels: l.levels(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.code_version);
        put_str(&mut out, &self.config.to_text());
        out.extend_from_slice(&(self.iteration as u64).to_le_bytes());
        let p = self.params.to_bytes();
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        out.extend_from_slice(&p);
        let a = &self.adam;
        for x in [a.lr, a.beta1, a.beta2, a.eps] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&a.step.to_le_bytes());
        out.extend_from_slice(&(a.m.len() as u32).to_le_bytes());
        for (m, v) in a.m.iter().zip(&a.v) {
            put_floats(&mut out, m);
            put_floats(&mut out, v);
        }
        out.extend_from_slice(&(self.levels.len() as u32).to_le_bytes());
        for l in &self.levels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let mut r = Reader { b, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(WmrError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(WmrError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let code_version = r.string()?;
        let config = RunConfig::from_text(&r.string()?)?;
        let iteration = r.u64()? as usize;
        let plen = r.u64()? as usize;
        let (params, used) = ParamStore::from_bytes(r.take(plen)?)?;
        if used != plen {
            return Err(WmrError::Checkpoint("parameter blob has trailing bytes".into()));
        }
        let (lr, beta1, beta2, eps) = (r.f32()?, r.f32()?, r.f32()?, r.f32()?);
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let (mut m, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            m.push(r.floats()?);
            v.push(r.floats()?);
        }
        let nl = r.u32()? as usize;
        let levels = (0..nl).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if r.pos != b.len() {
            return Err(WmrError::Checkpoint(format!("{} trailing bytes", b.len() - r.pos)));
        }
        let adam = AdamState { lr, beta1, beta2, eps, step, m, v };
        if adam.m.len() != params.len() || adam.m.iter().zip(params.iter()).any(|(m, (_, t))| m.len() != t.len()) {
            return Err(WmrError::Checkpoint("optimizer state does not match parameters".into()));
        }
        Ok(Self { code_version, config, iteration, params, adam, levels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b = std::fs::read(path).map_err(|e| WmrError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&b)
    }

    /// Networks for the stored config, checked against its architecture.
    pub fn nets(&self) -> Result<Nets> {
        let mut nets = crate::learner::init_nets(&self.config);
        nets.load_store(self.params.clone())?;
        Ok(nets)
    }

    /// Continue training. `cfg` may change run-length keys but must keep the
    /// same networks.
    pub fn resume(&self, cfg: RunConfig) -> Result<Learner> {
        if cfg.variant != self.config.variant || cfg.net != self.config.net {
            return Err(WmrError::Checkpoint("resume config changes the network architecture or variant".into()));
        }
        let mut nets = crate::learner::init_nets(&cfg);
        nets.load_store(self.params.clone())?;
        Learner::from_parts(cfg, nets, Some(self.adam.clone()), self.iteration, Some(&self.levels))
    }
}
