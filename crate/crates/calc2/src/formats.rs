//! Binary formats: weights (`CLC2`), global descriptors (`CLD2`) and
//! keypoint sets (`CLK2`). All integers and reals are little-endian; reals
//! are stored as 32-bit floats.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use calc2_core::descriptor::GlobalDescriptor;
use calc2_core::keypoints::{Keypoint, KeypointDescriptor, KeypointSet};
use calc2_core::net::{CalcNet, NetConfig, ParamStore};
use calc2_core::{Real, Tensor};

use crate::config;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"CLC2";
pub const DESCRIPTORS_MAGIC: &[u8; 4] = b"CLD2";
pub const KEYPOINTS_MAGIC: &[u8; 4] = b"CLK2";
pub const VERSION: u32 = 1;
/// Name of the tensor carrying the network configuration as text bytes.
pub const CONFIG_TENSOR: &str = "meta.config";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u32 },
    #[error("file truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] calc2_core::Error),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(FormatError::Truncated { what });
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn reals(&mut self, n: usize, what: &'static str) -> Result<Vec<Real>> {
        let bytes = self.take(n.checked_mul(4).ok_or(FormatError::Truncated { what })?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as Real)
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4], format: &'static str) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().expect("4 bytes");
        if &found != magic {
            return Err(FormatError::BadMagic {
                expected: *magic,
                found,
            });
        }
        let version = self.u32("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion { format, version });
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(FormatError::TrailingBytes(self.buf.len()))
        }
    }
}

fn put_reals(out: &mut Vec<u8>, data: &[Real]) {
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn header(out: &mut Vec<u8>, magic: &[u8; 4]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
}

/// Named tensors in file order.
pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    header(&mut out, WEIGHTS_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| FormatError::Invalid(format!("name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| FormatError::Invalid(format!("rank too high: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| FormatError::Invalid(format!("extent too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        put_reals(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes };
    r.header(WEIGHTS_MAGIC, "weights")?;
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| FormatError::Invalid("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(FormatError::Truncated { what: "tensor data" })?;
        let data = r.reals(n, "tensor data")?;
        let t = Tensor::new(&shape, data).map_err(|e| FormatError::Invalid(format!("tensor {name}: {e}")))?;
        out.push((name, t));
    }
    r.finish()?;
    Ok(out)
}

/// Network parameters plus the configuration as a byte tensor.
pub fn encode_weights(net: &CalcNet) -> Result<Vec<u8>> {
    let text = config::net_to_text(net.config());
    let meta = Tensor::new(&[text.len()], text.bytes().map(|b| b as Real).collect())?;
    let mut tensors = vec![(CONFIG_TENSOR.to_string(), meta)];
    tensors.extend(net.params().iter().map(|(n, t)| (n.to_string(), t.clone())));
    encode_tensors(&tensors)
}

pub fn decode_weights(bytes: &[u8]) -> Result<CalcNet> {
    let mut tensors = decode_tensors(bytes)?;
    if tensors.first().map(|(n, _)| n.as_str()) != Some(CONFIG_TENSOR) {
        return Err(FormatError::Invalid(format!("first tensor must be {CONFIG_TENSOR}")));
    }
    let (_, meta) = tensors.remove(0);
    let text: String = meta.data().iter().map(|&b| b as u8 as char).collect();
    let config: NetConfig = config::net_from_text(&text).map_err(|e| FormatError::Invalid(format!("{e:#}")))?;
    Ok(CalcNet::from_params(config, ParamStore::new(tensors))?)
}

pub fn save_weights(net: &CalcNet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_weights(net)?)
}

pub fn load_weights(path: &Path) -> Result<CalcNet> {
    decode_weights(&fs::read(path)?)
}

pub fn encode_descriptors(descriptors: &[GlobalDescriptor]) -> Result<Vec<u8>> {
    let dim = descriptors.first().map_or(0, |d| d.len());
    if let Some(d) = descriptors.iter().find(|d| d.len() != dim) {
        return Err(FormatError::Invalid(format!("descriptor of length {} in a file of dim {dim}", d.len())));
    }
    let mut out = Vec::with_capacity(16 + descriptors.len() * dim * 4);
    header(&mut out, DESCRIPTORS_MAGIC);
    out.extend_from_slice(&(descriptors.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for d in descriptors {
        put_reals(&mut out, d.as_slice());
    }
    Ok(out)
}

/// Descriptors come back as single-block vectors of the stored values.
pub fn decode_descriptors(bytes: &[u8]) -> Result<Vec<GlobalDescriptor>> {
    let mut r = Reader { buf: bytes };
    r.header(DESCRIPTORS_MAGIC, "descriptors")?;
    let count = r.u32("record count")? as usize;
    let dim = r.u32("dimension")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let v = r.reals(dim, "descriptor record")?;
        out.push(GlobalDescriptor::from_parts(v, 1, dim)?);
    }
    r.finish()?;
    Ok(out)
}

pub fn encode_keypoints(set: &KeypointSet, channels: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    header(&mut out, KEYPOINTS_MAGIC);
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(channels as u32).to_le_bytes());
    for (kp, d) in set.keypoints.iter().zip(&set.descriptors) {
        if d.len() != 8 * channels {
            return Err(FormatError::Invalid(format!("keypoint descriptor of length {} for C = {channels}", d.len())));
        }
        for v in [kp.u, kp.v, kp.channel] {
            let v = u16::try_from(v).map_err(|_| FormatError::Invalid(format!("keypoint field {v} exceeds u16")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_reals(&mut out, d.as_slice());
    }
    Ok(out)
}

/// Activations are not stored and read back as zero.
pub fn decode_keypoints(bytes: &[u8]) -> Result<(KeypointSet, usize)> {
    let mut r = Reader { buf: bytes };
    r.header(KEYPOINTS_MAGIC, "keypoints")?;
    let count = r.u32("keypoint count")? as usize;
    let channels = r.u32("channel count")? as usize;
    let mut set = KeypointSet::default();
    for _ in 0..count {
        let u = r.u16("keypoint u")? as usize;
        let v = r.u16("keypoint v")? as usize;
        let channel = r.u16("keypoint channel")? as usize;
        set.keypoints.push(Keypoint {
            u,
            v,
            channel,
            activation: 0.0,
        });
        set.descriptors.push(KeypointDescriptor(r.reals(8 * channels, "keypoint descriptor")?));
    }
    r.finish()?;
    Ok((set, channels))
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_round_trip_bit_exact() {
        let net = CalcNet::new(NetConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let bytes = encode_weights(&net).unwrap();
        let back = decode_weights(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_weights(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_version_errors() {
        let net = CalcNet::new(NetConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let bytes = encode_weights(&net).unwrap();
        for cut in [3, 9, 30, bytes.len() - 1] {
            assert!(matches!(decode_weights(&bytes[..cut]), Err(FormatError::Truncated { .. })), "cut {cut}");
        }
        let mut v2 = bytes.clone();
        v2[4] = 7;
        let err = decode_weights(&v2).unwrap_err();
        assert!(err.to_string().contains("version 7"), "{err}");
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(decode_weights(&bad), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn descriptors_round_trip() {
        let ds: Vec<GlobalDescriptor> = (0..3)
            .map(|i| GlobalDescriptor::from_vector(&[1.0, i as Real, 0.5]).unwrap())
            .collect();
        let back = decode_descriptors(&encode_descriptors(&ds).unwrap()).unwrap();
        for (a, b) in ds.iter().zip(&back) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn keypoints_round_trip() {
        let set = KeypointSet {
            keypoints: vec![Keypoint { u: 3, v: 9, channel: 1, activation: 0.0 }],
            descriptors: vec![KeypointDescriptor((0..16).map(|i| i as Real * 0.25).collect())],
        };
        let (back, c) = decode_keypoints(&encode_keypoints(&set, 2).unwrap()).unwrap();
        assert_eq!(c, 2);
        assert_eq!(back, set);
        assert!(encode_keypoints(&set, 3).is_err());
    }
}
