//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `MPSG`, u32 version, u32 hidden, u32 k_agg,
//! u32 num_classes, u32 num_feats, u8 neighbor policy, u32 tensor count,
//! then per tensor u32 rank, u32 dims, f64 values.

use std::fs;
use std::path::Path;

use super::model::{Arch, NeighborPolicy, SegModel};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MPSG";
const VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &SegModel) -> Vec<u8> {
    let a = model.arch();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [VERSION, a.hidden as u32, a.k_agg as u32, a.num_classes as u32, a.num_feats as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(match model.policy() {
        NeighborPolicy::FixedFromClean => 0,
        NeighborPolicy::RecomputeEachStep => 1,
    });
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for t in model.params() {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn model_from_bytes(buf: &[u8]) -> Result<SegModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let arch = Arch {
        hidden: r.u32()? as usize,
        k_agg: r.u32()? as usize,
        num_classes: r.u32()? as usize,
        num_feats: r.u32()? as usize,
    };
    let policy = match r.take(1)?[0] {
        0 => NeighborPolicy::FixedFromClean,
        1 => NeighborPolicy::RecomputeEachStep,
        p => return Err(Error::Checkpoint(format!("unknown neighbor policy {p}"))),
    };
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push(Tensor::new(shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    SegModel::from_params(arch, policy, params)
}

pub fn save_checkpoint(model: &SegModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SegModel> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&buf)
}
