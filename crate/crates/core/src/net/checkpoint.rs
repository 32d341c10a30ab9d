//! Versioned flat checkpoint: a binary header describing the architecture
//! followed by every parameter array in declared order as little-endian
//! `f64`. A text manifest mirroring the header is written next to it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Activation, Affine, BlockSpec, BlockState, ResidualNet};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DPCK";

fn state_code(s: BlockState) -> u8 {
    match s {
        BlockState::Active => 0,
        BlockState::Identity => 1,
        BlockState::AdapterOnly => 2,
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Linear => 1,
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn manifest(net: &ResidualNet) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "format_version = {CHECKPOINT_VERSION}");
    let _ = writeln!(m, "input_dim = {}", net.input_dim);
    let _ = writeln!(m, "num_classes = {}", net.num_classes);
    let _ = writeln!(m, "stem = {}", net.stem.is_some());
    let _ = writeln!(m, "widths = {:?}", net.widths());
    for (k, b) in net.blocks.iter().enumerate() {
        let _ = writeln!(
            m,
            "block{k} = in {} hidden {} out {} state {:?} activation {:?} adapter {}",
            b.in_dim,
            b.hidden_dim,
            b.out_dim,
            b.state,
            b.activation,
            b.adapter.is_some()
        );
    }
    let _ = writeln!(m, "parameters = {}", net.flatten().len());
    m
}

fn to_u32(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in 32 bits")))
}

pub fn encode(net: &ResidualNet) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(net.input_dim, "input_dim")?);
    buf.extend_from_slice(&to_u32(net.num_classes, "num_classes")?);
    buf.push(u8::from(net.stem.is_some()));
    buf.extend_from_slice(&to_u32(net.blocks.len(), "block count")?);
    for b in &net.blocks {
        buf.extend_from_slice(&to_u32(b.in_dim, "in_dim")?);
        buf.extend_from_slice(&to_u32(b.hidden_dim, "hidden_dim")?);
        buf.extend_from_slice(&to_u32(b.out_dim, "out_dim")?);
        buf.push(state_code(b.state));
        buf.push(activation_code(b.activation));
        buf.push(u8::from(b.adapter.is_some()));
    }
    for v in net.flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ResidualNet> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let input_dim = r.u32()?;
    let num_classes = r.u32()?;
    let has_stem = r.u8()? != 0;
    let count = r.u32()?;
    let mut blocks = Vec::with_capacity(count);
    for k in 0..count {
        let (in_dim, hidden, out_dim) = (r.u32()?, r.u32()?, r.u32()?);
        let state = match r.u8()? {
            0 => BlockState::Active,
            1 => BlockState::Identity,
            2 => BlockState::AdapterOnly,
            s => {
                return Err(Error::Checkpoint(format!(
                    "block {k}: unknown state code {s}"
                )))
            }
        };
        let activation = match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::Linear,
            a => {
                return Err(Error::Checkpoint(format!(
                    "block {k}: unknown activation code {a}"
                )))
            }
        };
        let has_adapter = r.u8()? != 0;
        let mut block = BlockSpec::new(
            Affine::zeros(in_dim, hidden),
            Affine::zeros(hidden, out_dim),
            activation,
        )?;
        block.state = state;
        block.adapter = has_adapter.then(|| Affine::zeros(in_dim, out_dim));
        blocks.push(block);
    }
    let first_width = blocks
        .first()
        .map(|b| b.in_dim)
        .ok_or_else(|| Error::Checkpoint("no blocks".into()))?;
    let feature = blocks.last().map_or(first_width, |b| b.out_dim);
    let mut net = ResidualNet {
        input_dim,
        num_classes,
        stem: has_stem.then(|| Affine::zeros(input_dim, first_width)),
        blocks,
        head: Affine::zeros(feature, num_classes),
    };
    let total: usize = net.parameters().iter().map(|a| a.len()).sum();
    let flat = (0..total).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.at != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.at
        )));
    }
    net.load_flat(&flat)?;
    Ok(net)
}

/// Writes the checkpoint and its `.manifest` companion.
pub fn save_checkpoint(net: &ResidualNet, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)?).map_err(|e| Error::io(path, e))?;
    let m = manifest_path(path);
    std::fs::write(&m, manifest(net)).map_err(|e| Error::io(m, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ResidualNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
