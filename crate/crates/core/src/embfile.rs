//! `.lvde` embedding files.
//!
//! Little-endian layout:
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `LVDE`                   |
//! | 4      | 4    | version, u32 = 1               |
//! | 8      | 1    | dtype, u8 (0 = f32)            |
//! | 9      | 1    | ndim, u8 = 2                   |
//! | 10     | 8    | rows, u64                      |
//! | 18     | 8    | cols, u64                      |
//! | 26     | 4·rows·cols | f32 values, row-major   |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"LVDE";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: usize = 26;

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

/// Serialises `t` (cast to f32) into the file layout.
pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(2);
    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

/// Parses a complete file image.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("header truncated: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if bytes[0..4] != MAGIC {
        return Err(format_err(
            0,
            format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..4])),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    if bytes[8] != DTYPE_F32 {
        return Err(format_err(8, format!("unsupported dtype {}", bytes[8])));
    }
    if bytes[9] != 2 {
        return Err(format_err(9, format!("expected ndim 2, got {}", bytes[9])));
    }
    let rows = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[18..26].try_into().unwrap());
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| n <= (usize::MAX - HEADER_LEN) as u64)
        .ok_or_else(|| format_err(10, format!("dims {rows}x{cols} overflow")))?
        as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() < payload {
        return Err(format_err(
            bytes.len(),
            format!("payload truncated: {} of {payload} bytes", body.len()),
        ));
    }
    if body.len() > payload {
        return Err(format_err(
            HEADER_LEN + payload,
            format!("{} trailing bytes after payload", body.len() - payload),
        ));
    }
    let mut data = Vec::with_capacity(payload / 4);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format_err(HEADER_LEN + 4 * i, "non-finite value"));
        }
        data.push(v);
    }
    Tensor::new(rows as usize, cols as usize, data)
}

pub fn write_embeddings<T: Scalar, W: Write>(t: &Tensor<T>, mut w: W) -> std::io::Result<()> {
    w.write_all(&encode(t))?;
    w.flush()
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<reader>", e))?;
    decode(&bytes)
}

pub fn save_embeddings<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(t, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<Tensor<f32>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(f)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f32> {
        Tensor::from_rows(&[[1.0f32, -2.5, 0.125], [1024.0, -0.0, 3.5]]).unwrap()
    }

    #[test]
    fn header_layout() {
        let b = encode(&sample());
        assert_eq!(b.len(), HEADER_LEN + 24);
        assert_eq!(&b[0..4], b"LVDE");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(b[8..10], [0, 2]);
        assert_eq!(&b[10..18], &2u64.to_le_bytes());
        assert_eq!(&b[18..26], &3u64.to_le_bytes());
    }

    #[test]
    fn errors_name_offsets() {
        let good = encode(&sample());
        let offset_of = |bytes: &[u8]| match decode(bytes) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected format error, got {other:?}"),
        };
        let mut b = good.clone();
        b[0..4].copy_from_slice(b"XXXX");
        assert_eq!(offset_of(&b), 0);
        let mut b = good.clone();
        b[4] = 2;
        assert_eq!(offset_of(&b), 4);
        let mut b = good.clone();
        b[8] = 1;
        assert_eq!(offset_of(&b), 8);
        assert_eq!(offset_of(&good[..good.len() - 3]), (good.len() - 3) as u64);
        assert_eq!(offset_of(&good[..10]), 10);
        let mut b = good.clone();
        b[10..18].copy_from_slice(&u64::MAX.to_le_bytes());
        assert_eq!(offset_of(&b), 10);
        let mut b = good.clone();
        b.push(0);
        assert_eq!(offset_of(&b), good.len() as u64);
        let mut b = good;
        b[26..30].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(offset_of(&b), 26);
    }

    #[test]
    fn negative_zero_survives() {
        let back = decode(&encode(&sample())).unwrap();
        assert!(back.bit_eq(&sample()));
        assert!(back.get(1, 1).is_sign_negative());
    }
}
