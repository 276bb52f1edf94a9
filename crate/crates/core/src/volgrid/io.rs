//! SVOL: a minimal little-endian container for f32 volumes and masks.
//!
//! Layout: magic `SVOL`, version `u16 = 1`, dtype `u16` (1 = volume,
//! 2 = mask), dims `3 x u32`, spacing `3 x f32`, then `H*W*D` f32 values with
//! `x` fastest.

use std::fs;
use std::path::Path;

use super::{MaskVolume, Volume};
use crate::error::{Error, Result};

pub const SVOL_MAGIC: &[u8; 4] = b"SVOL";
pub const SVOL_VERSION: u16 = 1;
const DTYPE_VOLUME: u16 = 1;
const DTYPE_MASK: u16 = 2;
const HEADER_LEN: usize = 4 + 2 + 2 + 12 + 12;

fn format_err(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        container: "SVOL",
        field,
        detail: detail.into(),
    }
}

pub(crate) fn encode(v: &Volume, dtype: u16) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * v.len());
    buf.extend_from_slice(SVOL_MAGIC);
    buf.extend_from_slice(&SVOL_VERSION.to_le_bytes());
    buf.extend_from_slice(&dtype.to_le_bytes());
    for d in v.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in v.spacing() {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    for x in v.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub(crate) fn decode(bytes: &[u8], want_dtype: u16) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err("header", format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != SVOL_MAGIC {
        return Err(format_err("magic", format!("{:?}", String::from_utf8_lossy(&bytes[0..4]))));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());

    let version = u16_at(4);
    if version != SVOL_VERSION {
        return Err(format_err("version", format!("{version}")));
    }
    let dtype = u16_at(6);
    if dtype != want_dtype {
        return Err(format_err("dtype", format!("expected {want_dtype}, found {dtype}")));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        *d = u32_at(8 + 4 * a) as usize;
        if *d == 0 {
            return Err(format_err("dims", format!("axis {a} is zero")));
        }
    }
    let mut spacing = [0f32; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        *s = f32_at(20 + 4 * a);
        if !(s.is_finite() && *s > 0.0) {
            return Err(format_err("spacing", format!("axis {a} is {s}")));
        }
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = dims.iter().product::<usize>();
    if payload.len() % 4 != 0 || payload.len() / 4 != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(dims, spacing, data)
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(v, DTYPE_VOLUME)).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, DTYPE_VOLUME)
}

pub fn write_mask(path: impl AsRef<Path>, m: &MaskVolume) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(m.as_volume(), DTYPE_MASK)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    MaskVolume::new(decode(&bytes, DTYPE_MASK)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_constant() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.svol");
        let v = Volume::filled([2, 2, 2], [0.5, 0.5, 0.8], 0.5);
        write_volume(&p, &v).unwrap();
        assert!(read_volume(&p).unwrap().bit_eq(&v));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&Volume::zeros([2, 2, 2], [1.0; 3]), 1);
        bytes[0..4].copy_from_slice(b"XXXX");
        match decode(&bytes, 1) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn patched_dims_length_mismatch() {
        let mut bytes = encode(&Volume::zeros([3, 3, 3], [1.0; 3]), 1);
        bytes[8..12].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes, 1),
            Err(Error::LengthMismatch { expected: 36, found: 27 })
        ));
    }

    #[test]
    fn nan_payload_rejected() {
        let mut bytes = encode(&Volume::zeros([2, 1, 1], [1.0; 3]), 1);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn dtype_and_version_checked() {
        let bytes = encode(&Volume::zeros([2, 1, 1], [1.0; 3]), 1);
        assert!(matches!(decode(&bytes, 2), Err(Error::Format { field: "dtype", .. })));
        let mut b2 = bytes.clone();
        b2[4] = 9;
        assert!(matches!(decode(&b2, 1), Err(Error::Format { field: "version", .. })));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.svol");
        let m = MaskVolume::from_predicate([4, 3, 2], [1.0; 3], |x, _, _| x > 1);
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
        assert!(read_volume(&p).is_err());
    }

    proptest! {
        #[test]
        fn svol_round_trip_is_bit_exact(
            nx in 1usize..6, ny in 1usize..6, nz in 1usize..6,
            seed in any::<u64>(),
        ) {
            let mut s = seed;
            let v = Volume::from_fn([nx, ny, nz], [0.5, 0.7, 1.3], |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let bits = (s >> 32) as u32;
                let f = f32::from_bits(bits);
                if f.is_finite() { f } else { -0.0 }
            });
            prop_assert!(decode(&encode(&v, 1), 1).unwrap().bit_eq(&v));
        }
    }
}
