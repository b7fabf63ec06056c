//! Binary network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field        | size                | content                                  |
//! |--------------|---------------------|------------------------------------------|
//! | magic        | 8 bytes             | `TRLNET\0\0`                              |
//! | version      | u32                 | currently 1                               |
//! | spec length  | u32                 | byte length of the spec JSON              |
//! | spec         | spec length bytes   | `NetSpec` as UTF-8 JSON                   |
//! | param count  | u64                 | number of f64 parameters                  |
//! | params       | 8 bytes each        | IEEE-754 bits, little-endian              |
//!
//! Parameters follow `NetSpec::layer_shapes` order: trunk layers, then the
//! value and advantage heads (dueling) or the Q head; within a layer
//! `w_mu`, `b_mu`, then `w_sigma`, `b_sigma` for noisy layers. Weights are
//! row-major `n_out x n_in`. Storing raw bits makes a reload bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NetError, NetSpec, Network};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"TRLNET\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> NetError {
    NetError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(net: &Network, mut w: W) -> Result<(), NetError> {
    let spec = serde_json::to_vec(net.spec()).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    w.write_all(&CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(spec.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&spec).map_err(io_err)?;
    w.write_all(&(net.n_params() as u64).to_le_bytes()).map_err(io_err)?;
    for p in net.params() {
        w.write_all(&p.to_bits().to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network, NetError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint("not a network checkpoint (bad magic)".into()));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(io_err)?;
    let version = u32::from_le_bytes(u32b);
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32b).map_err(io_err)?;
    let mut spec = vec![0u8; u32::from_le_bytes(u32b) as usize];
    r.read_exact(&mut spec).map_err(io_err)?;
    let spec: NetSpec = serde_json::from_slice(&spec).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(io_err)?;
    let count = u64::from_le_bytes(u64b) as usize;
    let mut params = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        r.read_exact(&mut u64b).map_err(io_err)?;
        params.push(f64::from_bits(u64::from_le_bytes(u64b)));
    }
    Network::from_params(spec, params)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<(), NetError> {
    let f = File::create(path).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
    write_checkpoint(net, BufWriter::new(f))
}

pub fn load_checkpoint(path: &Path) -> Result<Network, NetError> {
    let f = File::open(path).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
    read_checkpoint(BufReader::new(f))
}
