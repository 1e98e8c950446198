//! Binary parameter container. Layout, all integers `u32` little-endian:
//!
//! ```text
//! b"PSNETCKP" version blocks base_features patch_size map_size kernel count
//! count × { name_len name_bytes ndim dims… values as f32 LE }
//! ```

use std::path::Path;

use super::network::{Network, NetworkConfig};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PSNETCKP";
const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    put(&mut out, VERSION as usize);
    let c = net.config();
    for v in [c.blocks, c.base_features, c.patch_size, c.map_size, c.kernel] {
        put(&mut out, v);
    }
    put(&mut out, net.params().len());
    for (spec, p) in net.param_specs().iter().zip(net.params()) {
        put(&mut out, spec.name.len());
        out.extend_from_slice(spec.name.as_bytes());
        put(&mut out, p.ndim());
        for d in p.shape() {
            put(&mut out, *d);
        }
        for v in p.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or("truncated")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> std::result::Result<Network<T>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let config = NetworkConfig {
        blocks: r.u32()?,
        base_features: r.u32()?,
        patch_size: r.u32()?,
        map_size: r.u32()?,
        kernel: r.u32()?,
    };
    config.validate().map_err(|e| e.to_string())?;
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count.min(1024));
    let mut names = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "parameter name is not UTF-8")?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or("tensor too large")?;
        let raw = r.take(n.checked_mul(4).ok_or("tensor too large")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        params.push(Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?);
        names.push(name);
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes after last tensor".into());
    }
    let net = Network::from_params(config, params).map_err(|e| e.to_string())?;
    for (spec, name) in net.param_specs().iter().zip(&names) {
        if spec.name != *name {
            return Err(format!("expected parameter {}, found {name}", spec.name));
        }
    }
    Ok(net)
}

pub fn save_checkpoint<T: Real>(path: &Path, net: &Network<T>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|reason| Error::format(path, reason))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Network<f32> {
        let cfg = NetworkConfig {
            blocks: 1,
            base_features: 2,
            patch_size: 3,
            map_size: 4,
            kernel: 3,
        };
        Network::new(cfg, 9).unwrap()
    }

    #[test]
    fn round_trip_is_exact_for_f32() {
        let net = small();
        let bytes = encode_checkpoint(&net);
        let back: Network<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode_checkpoint(&small());
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint::<f32>(&[bytes.as_slice(), &[0]].concat()).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint::<f32>(&bad).is_err());
        assert!(decode_checkpoint::<f32>(&[]).is_err());
    }
}
