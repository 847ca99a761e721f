//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic            8 bytes  "HTPMDNCK"
//! version          u32      currently 1
//! input_dim        u32
//! hidden_dim       u32
//! num_layers       u32
//! num_components   u32
//! num_horizons     u32
//! dt               f64
//! eps_sigma        f64
//! eps_rho          f64
//! sigma_offset     f64
//! tensor_count     u32
//! tensor_count times:
//!     name_len     u16, then name_len bytes of UTF-8 name
//!     ndim         u8, then ndim x u32 dims
//!     values       prod(dims) x f64
//! sha256           32 bytes over everything above
//! ```
//!
//! Tensors must appear in the order and shapes given by
//! [`ParamLayout`](super::ParamLayout) for the header's architecture.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelParams, ParamLayout};
use crate::error::{Error, Result};
use crate::mdn::ActivationConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HTPMDNCK";
const DIGEST_LEN: usize = 32;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::with_capacity(128 + params.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        cfg.input_dim,
        cfg.hidden_dim,
        cfg.num_layers,
        cfg.num_components,
        cfg.num_horizons,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [
        cfg.dt,
        cfg.activation.eps_sigma,
        cfg.activation.eps_rho,
        cfg.activation.sigma_offset,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let tensors = params.layout().tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &params.values()[t.range()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checksum);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checksum);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("length checked"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(Error::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }

    let mut cur = Cursor { buf: &body[12..] };
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = cur.u32()? as usize;
    }
    let [dt, eps_sigma, eps_rho, sigma_offset] = [cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?];
    let config = ModelConfig {
        input_dim: dims[0],
        hidden_dim: dims[1],
        num_layers: dims[2],
        num_components: dims[3],
        num_horizons: dims[4],
        dt,
        activation: ActivationConfig {
            eps_sigma,
            eps_rho,
            sigma_offset,
        },
    };
    config.validate()?;
    if dims.iter().any(|&d| d > u16::MAX as usize) {
        return Err(Error::ModelShape(format!(
            "implausible architecture {dims:?}"
        )));
    }
    let layout = ParamLayout::new(&config);
    if layout.total().saturating_mul(8) > body.len() {
        return Err(Error::ModelShape(
            "header declares more weights than the file holds".into(),
        ));
    }

    let count = cur.u32()? as usize;
    if count != layout.tensors().len() {
        return Err(Error::ModelShape(format!(
            "checkpoint has {count} tensors, architecture needs {}",
            layout.tensors().len()
        )));
    }
    let mut values = Vec::with_capacity(layout.total());
    for spec in layout.tensors() {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::ModelShape("tensor name is not UTF-8".into()))?;
        let ndim = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        if name != spec.name || shape != spec.shape {
            return Err(Error::ModelShape(format!(
                "expected tensor {} {:?}, found {name} {shape:?}",
                spec.name, spec.shape
            )));
        }
        let raw = cur.take(spec.len() * 8)?;
        values.extend(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))),
        );
    }
    if !cur.buf.is_empty() {
        return Err(Error::ModelShape(format!(
            "{} trailing bytes after tensors",
            cur.buf.len()
        )));
    }
    ModelParams::from_values(config, values)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
