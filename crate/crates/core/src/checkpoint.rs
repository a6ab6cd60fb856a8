//! Checkpoint serialization.
//!
//! Layout (all integers and floats little-endian):
//! magic `"STLB"` · format version `u16` · architecture JSON (`u32` length
//! prefix) · per-layer parameter blobs as raw `f64`s in layer order
//! (convolution: kernel then bias; fully-connected: weight then bias;
//! stateless layers contribute nothing) · the network's `u64` seed · CRC32
//! of every preceding byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{ArchitectureSpec, LayerParams, Network};
use crate::tensor::Tensor4;

const MAGIC: &[u8; 4] = b"STLB";
const VERSION: u16 = 1;

/// Serializes a network to the checkpoint byte format.
pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let arch_json = serde_json::to_vec(net.arch())
        .map_err(|e| Error::Corrupt(format!("architecture serialization failed: {e}")))?;
    buf.extend_from_slice(&(arch_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&arch_json);
    for i in 0..net.arch().layers.len() {
        match net.layer_params(i) {
            LayerParams::None => {}
            LayerParams::Conv(c) => {
                for v in c.kernel.as_slice() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                for v in &c.bias {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            LayerParams::Fc(f) => {
                for v in &f.weight {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                for v in &f.bias {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    buf.extend_from_slice(&net.rng_seed.to_le_bytes());
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&buf);
    buf.extend_from_slice(&hasher.finalize().to_le_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

/// Parses a checkpoint back into a network, verifying magic, version,
/// shapes, and the trailing CRC.
pub fn from_bytes(data: &[u8]) -> Result<Network> {
    let mut cur = Cursor { data, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, not a checkpoint file".into(),
        });
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    if data.len() < 4 {
        return Err(Error::Format {
            offset: 0,
            msg: "missing checksum".into(),
        });
    }
    let body = &data[..data.len() - 4];
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body);
    let want = u32::from_le_bytes(data[data.len() - 4..].try_into().expect("4 bytes"));
    if hasher.finalize() != want {
        return Err(Error::Corrupt("checkpoint checksum mismatch".into()));
    }

    let arch_len =
        u32::from_le_bytes(cur.take(4, "architecture length")?.try_into().expect("4 bytes"))
            as usize;
    let arch_offset = cur.pos;
    let arch_json = cur.take(arch_len, "architecture")?;
    let arch: ArchitectureSpec = serde_json::from_slice(arch_json).map_err(|e| Error::Format {
        offset: arch_offset,
        msg: format!("architecture JSON: {e}"),
    })?;
    arch.validate()?;

    let template = Network::init_random(arch.clone(), 0)?;
    let mut params = Vec::with_capacity(arch.layers.len());
    for (i, p) in template.params().iter().enumerate() {
        params.push(match p {
            LayerParams::None => LayerParams::None,
            LayerParams::Conv(c) => {
                let kernel = Tensor4::from_vec(
                    c.kernel.shape(),
                    cur.f64s(c.kernel.len(), &format!("layer {i} kernel"))?,
                )?;
                let bias = cur.f64s(c.bias.len(), &format!("layer {i} bias"))?;
                let mut nc = c.clone();
                nc.kernel = kernel;
                nc.bias = bias;
                LayerParams::Conv(nc)
            }
            LayerParams::Fc(f) => {
                let weight = cur.f64s(f.weight.len(), &format!("layer {i} weight"))?;
                let bias = cur.f64s(f.bias.len(), &format!("layer {i} bias"))?;
                let mut nf = f.clone();
                nf.weight = weight;
                nf.bias = bias;
                LayerParams::Fc(nf)
            }
        });
    }
    let seed = u64::from_le_bytes(cur.take(8, "seed")?.try_into().expect("8 bytes"));
    if cur.pos != data.len() - 4 {
        return Err(Error::Format {
            offset: cur.pos,
            msg: "trailing bytes after parameters".into(),
        });
    }
    Ok(Network::from_parts(arch, params, seed))
}

/// Writes `net` to `path` in the checkpoint format.
pub fn save(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(net)?)?;
    Ok(())
}

/// Loads a checkpoint written by [`save`].
pub fn load(path: &Path) -> Result<Network> {
    let data = fs::read(path)?;
    from_bytes(&data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ArchitectureSpec;

    fn sample_net() -> Network {
        Network::init_random(ArchitectureSpec::mini_alex(5), 314).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let net = sample_net();
        let bytes = to_bytes(&net).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(net, back);
        assert_eq!(back.rng_seed, 314);
    }

    #[test]
    fn serialization_is_deterministic() {
        let net = sample_net();
        assert_eq!(to_bytes(&net).unwrap(), to_bytes(&net).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = to_bytes(&sample_net()).unwrap();
        bytes[0] = b'X';
        match from_bytes(&bytes) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at offset 0, got {other:?}"),
        }
    }

    #[test]
    fn flipped_bit_fails_checksum() {
        let mut bytes = to_bytes(&sample_net()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(from_bytes(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn truncation_rejected() {
        let bytes = to_bytes(&sample_net()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() / 3]).is_err());
    }

    #[test]
    fn unknown_version_rejected() {
        let mut bytes = to_bytes(&sample_net()).unwrap();
        bytes[4] = 0xEE;
        bytes[5] = 0xEE;
        assert!(matches!(from_bytes(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = sample_net();
        save(&net, &path).unwrap();
        assert_eq!(load(&path).unwrap(), net);
    }
}
