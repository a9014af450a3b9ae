//! RVHM array container.
//!
//! Layout, all little-endian: 16-byte header (`b"RVHM"`, version `u32`,
//! `ndim` `u32`, reserved `u32` = 0), then `ndim` `u32` dims, then the
//! row-major `f32` payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RVHM";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// Encode an array; `field` names the payload in errors.
pub fn encode(field: &str, dims: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let count: usize = dims.iter().product();
    if count != data.len() {
        return Err(Error::Consistency(format!(
            "{field}: dims {dims:?} describe {count} values but {} were given",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::format(field, format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Decode an array, returning `(dims, payload)`.
pub fn decode(field: &str, bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(field, format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(field, "bad magic"));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::format(field, format!("unsupported version {version}")));
    }
    let ndim = read_u32(bytes, 8) as usize;
    let dims_end = HEADER_LEN + 4 * ndim;
    if bytes.len() < dims_end {
        return Err(Error::format(field, "truncated dims"));
    }
    let dims: Vec<usize> = (0..ndim).map(|i| read_u32(bytes, HEADER_LEN + 4 * i) as usize).collect();
    let count: usize = dims.iter().product();
    let expected = dims_end + 4 * count;
    if bytes.len() != expected {
        return Err(Error::format(
            field,
            format!("payload is {} bytes, dims {dims:?} need {}", bytes.len() - dims_end, 4 * count),
        ));
    }
    let data = bytes[dims_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok((dims, data))
}

pub fn write_file(path: &Path, field: &str, dims: &[usize], data: &[f32]) -> Result<()> {
    let bytes = encode(field, dims, data)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path, field: &str) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(field, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let bytes = encode("x", &[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.5]).unwrap();
        assert_eq!(&bytes[0..4], b"RVHM");
        assert_eq!(bytes[4..8], [1, 0, 0, 0]);
        assert_eq!(bytes[8..12], [2, 0, 0, 0]);
        assert_eq!(bytes[12..16], [0, 0, 0, 0]);
        assert_eq!(bytes[16..20], [2, 0, 0, 0]);
        assert_eq!(bytes[20..24], [3, 0, 0, 0]);
        assert_eq!(bytes[24 + 4 * 5..], 5.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 24);
    }

    #[test]
    fn truncation_names_field() {
        let bytes = encode("heatmap", &[4, 4], &[1.0; 16]).unwrap();
        match decode("heatmap", &bytes[..bytes.len() - 3]) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "heatmap"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(decode("heatmap", &bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode("heatmap", &bad), Err(Error::Format { .. })));
    }

    proptest::proptest! {
        #[test]
        fn round_trip(dims in proptest::collection::vec(1usize..5, 0..4), seed in 0u32..1000) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 7919) & 0x7f7f_ffff)).collect();
            let (d2, v2) = decode("p", &encode("p", &dims, &data).unwrap()).unwrap();
            proptest::prop_assert_eq!(d2, dims);
            proptest::prop_assert!(v2.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
