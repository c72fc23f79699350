//! Binary weight container.
//!
//! ```text
//! "DECNNET\0"                    magic, 8 bytes
//! u32 version                    currently 1
//! u32 layer count
//! per layer: u32 in, u32 out, u32 kernel_h, u32 kernel_w, u8 activation (0 identity, 1 relu)
//! u8 has_skip [, u32 from, u32 to]
//! f64 parameters, per layer weights ([out][in][kh][kw]) then biases
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::conv::KERNEL;
use super::network::{Activation, Conv2d, Network, Skip};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DECNNET\0";
pub const VERSION: u32 = 1;

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b[0])
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("weight file is truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_network(w: &mut impl Write, net: &Network) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, net.depth() as u32)?;
    for l in net.layers() {
        write_u32(w, l.in_channels as u32)?;
        write_u32(w, l.out_channels as u32)?;
        write_u32(w, KERNEL as u32)?;
        write_u32(w, KERNEL as u32)?;
        w.write_all(&[match l.activation {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }])?;
    }
    match net.skip() {
        Some(s) => {
            w.write_all(&[1])?;
            write_u32(w, s.from as u32)?;
            write_u32(w, s.to as u32)?;
        }
        None => w.write_all(&[0])?,
    }
    for p in net.params() {
        write_f64(w, p)?;
    }
    Ok(())
}

pub fn read_network(r: &mut impl Read) -> Result<Network> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a network weight file".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let depth = read_u32(r)? as usize;
    if depth == 0 || depth > 4096 {
        return Err(Error::Format(format!("implausible layer count {depth}")));
    }
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let cin = read_u32(r)? as usize;
        let cout = read_u32(r)? as usize;
        let (kh, kw) = (read_u32(r)? as usize, read_u32(r)? as usize);
        if kh != KERNEL || kw != KERNEL {
            return Err(Error::Format(format!("unsupported kernel {kh}x{kw}")));
        }
        let activation = match read_u8(r)? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            t => return Err(Error::Format(format!("unknown activation tag {t}"))),
        };
        layers.push(Conv2d::zeros(cin, cout, activation));
    }
    let skip = match read_u8(r)? {
        0 => None,
        1 => Some(Skip {
            from: read_u32(r)? as usize,
            to: read_u32(r)? as usize,
        }),
        t => return Err(Error::Format(format!("invalid skip flag {t}"))),
    };
    let mut net = Network::from_layers(layers, skip).map_err(|e| Error::Format(e.to_string()))?;
    let params = (0..net.num_params()).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
    net.set_params(&params)?;
    Ok(net)
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_network(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    read_network(&mut BufReader::new(File::open(path)?))
}
