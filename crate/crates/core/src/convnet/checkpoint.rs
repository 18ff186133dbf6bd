//! Binary model checkpoint, all fields little-endian:
//!
//! ```text
//! magic        8 bytes  "DLMCNN01"
//! version      u32      1
//! n_blocks     u32
//! filters      u32
//! kernel_size  u32
//! pool_size    u32
//! dropout      f64
//! in_channels  u32
//! in_length    u32
//! n_params     u64
//! params       n_params × f64, declaration order
//! ```

use std::io::{Read, Write};

use super::network::{Network, NetworkArch};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"DLMCNN01";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(net: &Network<T>, mut w: W) -> Result<()> {
    let a = net.arch();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [a.n_blocks, a.filters, a.kernel_size, a.pool_size] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&a.dropout_rate.to_le_bytes())?;
    w.write_all(&(a.input_channels as u32).to_le_bytes())?;
    w.write_all(&(a.input_length as u32).to_le_bytes())?;
    w.write_all(&(net.n_params() as u64).to_le_bytes())?;
    for p in net.params() {
        w.write_all(&p.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Network<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n_blocks = read_u32(&mut r)? as usize;
    let filters = read_u32(&mut r)? as usize;
    let kernel_size = read_u32(&mut r)? as usize;
    let pool_size = read_u32(&mut r)? as usize;
    let dropout_rate = f64::from_bits(read_u64(&mut r)?);
    let input_channels = read_u32(&mut r)? as usize;
    let input_length = read_u32(&mut r)? as usize;
    let arch = NetworkArch {
        n_blocks,
        filters,
        kernel_size,
        pool_size,
        dropout_rate,
        input_channels,
        input_length,
    };
    arch.validate()?;
    let n = read_u64(&mut r)? as usize;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        params.push(T::of(f64::from_bits(read_u64(&mut r)?)));
    }
    Network::from_params(arch, params)
}
