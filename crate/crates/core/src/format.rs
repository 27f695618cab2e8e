//! Binary tensor files with JSON sidecars.
//!
//! All integers and floats are little-endian.
//!
//! Full tensor (`CHEBFULL`):
//!
//! ```text
//! magic    8 bytes  "CHEBFULL"
//! version  u32      1
//! d        u32
//! d times: lo f64, hi f64, count u64
//! values   f64 * prod(count), row-major (last dimension fastest)
//! ```
//!
//! TT tensor (`CHEBTT\0\0`):
//!
//! ```text
//! magic    8 bytes  "CHEBTT\0\0"
//! version  u32      1
//! d        u32
//! flags    u32      bit 0: a Chebyshev grid follows the ranks
//! modes    u64 * d
//! ranks    u64 * (d + 1)
//! grid     d times: lo f64, hi f64   (only if flag bit 0 is set)
//! cores    for each core k: f64 * (n_k r_{k-1} r_k) in (j, a, b) order, b fastest
//! ```
//!
//! The sidecar `<file>.json` repeats the header in readable form.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chebyshev::{ChebyshevGrid, FullChebyshevTensor, Interval};
use crate::error::{Error, Result};
use crate::tensor_train::{TtCore, TtTensor};

pub const FULL_MAGIC: &[u8; 8] = b"CHEBFULL";
pub const TT_MAGIC: &[u8; 8] = b"CHEBTT\0\0";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_GRID: u32 = 1;

/// Readable copy of a full tensor header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub grid: ChebyshevGrid,
    pub values: usize,
}

/// Readable copy of a TT header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub mode_sizes: Vec<usize>,
    pub ranks: Vec<usize>,
    pub grid: Option<ChebyshevGrid>,
    pub stored_values: usize,
}

/// `<path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_full(t: &FullChebyshevTensor) -> Vec<u8> {
    let grid = t.grid();
    let mut out = Vec::with_capacity(16 + 24 * grid.dim() + 8 * t.values().len());
    out.extend_from_slice(FULL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for d in grid.dims() {
        out.extend_from_slice(&d.interval().lo().to_le_bytes());
        out.extend_from_slice(&d.interval().hi().to_le_bytes());
        out.extend_from_slice(&(d.count() as u64).to_le_bytes());
    }
    t.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out
}

pub fn decode_full(bytes: &[u8]) -> Result<FullChebyshevTensor> {
    let mut r = Reader::new(bytes);
    r.magic(FULL_MAGIC)?;
    r.version()?;
    let d = r.u32()? as usize;
    let mut dims = Vec::with_capacity(d);
    for _ in 0..d {
        let iv = Interval::new(r.f64()?, r.f64()?).map_err(|e| Error::Format(e.to_string()))?;
        dims.push((iv, r.len()?));
    }
    let grid = ChebyshevGrid::new(dims).map_err(|e| Error::Format(e.to_string()))?;
    let n = grid.dense_len().map_err(|e| Error::Format(e.to_string()))?;
    let values = r.f64s(n)?;
    r.finish()?;
    FullChebyshevTensor::from_values(grid, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn full_header(t: &FullChebyshevTensor) -> FullHeader {
    FullHeader {
        format: "chebyshev-full".into(),
        version: FORMAT_VERSION,
        dim: t.dim(),
        grid: t.grid().clone(),
        values: t.values().len(),
    }
}

/// Write the tensor and its sidecar.
pub fn write_full(path: &Path, t: &FullChebyshevTensor) -> Result<()> {
    fs::write(path, encode_full(t))?;
    write_json(&sidecar_path(path), &full_header(t))
}

pub fn read_full(path: &Path) -> Result<FullChebyshevTensor> {
    decode_full(&fs::read(path)?)
}

pub fn encode_tt(t: &TtTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * t.storage_len());
    out.extend_from_slice(TT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.dim() as u32).to_le_bytes());
    let flags = if t.grid().is_some() { FLAG_GRID } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for n in t.mode_sizes() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for r in t.ranks() {
        out.extend_from_slice(&(r as u64).to_le_bytes());
    }
    if let Some(grid) = t.grid() {
        for iv in grid.intervals() {
            out.extend_from_slice(&iv.lo().to_le_bytes());
            out.extend_from_slice(&iv.hi().to_le_bytes());
        }
    }
    for core in t.cores() {
        core.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    out
}

pub fn decode_tt(bytes: &[u8]) -> Result<TtTensor> {
    let fmt = |e: Error| Error::Format(e.to_string());
    let mut r = Reader::new(bytes);
    r.magic(TT_MAGIC)?;
    r.version()?;
    let d = r.u32()? as usize;
    let flags = r.u32()?;
    if flags & !FLAG_GRID != 0 {
        return Err(Error::Format(format!("unknown flags {flags:#x}")));
    }
    let modes = (0..d).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let ranks = (0..=d).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let grid = if flags & FLAG_GRID != 0 {
        let mut dims = Vec::with_capacity(d);
        for &n in &modes {
            dims.push((Interval::new(r.f64()?, r.f64()?).map_err(fmt)?, n));
        }
        Some(ChebyshevGrid::new(dims).map_err(fmt)?)
    } else {
        None
    };
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let len = modes[k]
            .checked_mul(ranks[k])
            .and_then(|v| v.checked_mul(ranks[k + 1]))
            .ok_or_else(|| Error::Format("core size overflows".into()))?;
        cores.push(TtCore::new(modes[k], ranks[k], ranks[k + 1], r.f64s(len)?).map_err(fmt)?);
    }
    r.finish()?;
    let t = TtTensor::new(cores).map_err(fmt)?;
    match grid {
        Some(g) => t.with_grid(g).map_err(fmt),
        None => Ok(t),
    }
}

pub fn tt_header(t: &TtTensor) -> TtHeader {
    TtHeader {
        format: "chebyshev-tt".into(),
        version: FORMAT_VERSION,
        dim: t.dim(),
        mode_sizes: t.mode_sizes(),
        ranks: t.ranks(),
        grid: t.grid().cloned(),
        stored_values: t.storage_len(),
    }
}

pub fn write_tt(path: &Path, t: &TtTensor) -> Result<()> {
    fs::write(path, encode_tt(t))?;
    write_json(&sidecar_path(path), &tt_header(t))
}

pub fn read_tt(path: &Path) -> Result<TtTensor> {
    decode_tt(&fs::read(path)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        if self.take(8)? != expected {
            return Err(Error::Format("bad magic".into()));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(Error::Format(format!("unsupported version {v}"))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format(format!("length {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflows".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
