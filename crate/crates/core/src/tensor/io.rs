//! TNSR parameter container (little-endian):
//! magic `TNSR`, u16 version, u32 tensor count, then per tensor a u16 name
//! length, UTF-8 name, u32 rank, rank×u32 extents and the f32 payload,
//! followed by the SHA-256 of everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

pub const TNSR_MAGIC: &[u8; 4] = b"TNSR";
pub const TNSR_VERSION: u16 = 1;

const CONTAINER: &str = "TNSR";

/// A named tensor as stored in a container.
pub type NamedTensor = (String, Tensor<f32>);

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(TNSR_MAGIC);
    out.extend_from_slice(&TNSR_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len()).map_err(|_| Error::Validation(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(nb);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                container: CONTAINER,
                field,
                detail: "truncated".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let fmt = |field, detail: String| Error::Format {
        container: CONTAINER,
        field,
        detail,
    };
    if bytes.len() < 4 + 2 + 4 + 32 {
        return Err(fmt("header", format!("{} bytes is too short", bytes.len())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(fmt("checksum", "content digest mismatch".into()));
    }
    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(4, "magic")? != TNSR_MAGIC {
        return Err(fmt("magic", "expected TNSR".into()));
    }
    let version = c.u16("version")?;
    if version != TNSR_VERSION {
        return Err(fmt("version", format!("unsupported version {version}")));
    }
    let count = c.u32("count")? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let nlen = c.u16("name")? as usize;
        let name = std::str::from_utf8(c.take(nlen, "name")?)
            .map_err(|e| fmt("name", e.to_string()))?
            .to_owned();
        let rank = c.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(fmt("rank", format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("shape")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| fmt("shape", "overflow".into()))?, "payload")?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("tensor {name} holds non-finite values")));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != body.len() {
        return Err(fmt("payload", format!("{} trailing bytes", body.len() - c.pos)));
    }
    Ok(out)
}

pub fn write_tensors(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedTensor> {
        vec![
            ("conv0.w".into(), Tensor::from_fn(&[2, 1, 3, 3, 3], |i| i as f32 * 0.25 - 3.0)),
            ("fc.b".into(), Tensor::scalar(-1.5)),
        ]
    }

    #[test]
    fn round_trip() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(decode(&bytes).unwrap(), sample());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tnsr");
        write_tensors(&p, &sample()).unwrap();
        assert_eq!(read_tensors(&p).unwrap(), sample());
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[20] ^= 1;
        assert!(matches!(decode(&bytes), Err(Error::Format { field: "checksum", .. })));
    }

    #[test]
    fn bad_magic_with_valid_digest() {
        let mut bytes = encode(&sample()).unwrap();
        bytes.truncate(bytes.len() - 32);
        bytes[0] = b'X';
        let d = Sha256::digest(&bytes);
        bytes.extend_from_slice(&d);
        assert!(matches!(decode(&bytes), Err(Error::Format { field: "magic", .. })));
    }

    #[test]
    fn identical_inputs_identical_bytes() {
        assert_eq!(encode(&sample()).unwrap(), encode(&sample()).unwrap());
    }
}
