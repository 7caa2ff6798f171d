//! `HST1` binary tensor records.
//!
//! Layout: the magic `HST1`, one byte of rank, `rank` little-endian `u32`
//! dimensions, then the values as little-endian `f32` in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HST1";

pub fn write<W: Write>(mut out: W, t: &Tensor<f32>) -> Result<()> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::format("HST1", format!("rank {} exceeds 255", t.rank())))?;
    out.write_all(&MAGIC)?;
    out.write_all(&[rank])?;
    for &d in t.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::format("HST1", format!("dimension {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(5 + 4 * t.rank() + 4 * t.len());
    write(&mut buf, t).expect("writing to memory");
    buf
}

pub fn read<R: Read>(mut src: R) -> Result<Tensor<f32>> {
    let mut head = [0u8; 5];
    src.read_exact(&mut head)
        .map_err(|e| Error::format("HST1", format!("truncated header: {e}")))?;
    if head[..4] != MAGIC {
        return Err(Error::format("HST1", format!("bad magic {:?}", &head[..4])));
    }
    let rank = head[4] as usize;
    let mut dims = vec![0u8; rank * 4];
    src.read_exact(&mut dims)
        .map_err(|e| Error::format("HST1", format!("truncated dimensions: {e}")))?;
    let shape: Vec<usize> = dims
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("HST1", format!("shape {shape:?} overflows")))?;
    let mut payload = Vec::new();
    src.take(n as u64).read_to_end(&mut payload)?;
    if payload.len() != n {
        return Err(Error::format(
            "HST1",
            format!("payload truncated: expected {n} bytes, got {}", payload.len()),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("HST1", "non-finite value in payload"));
    }
    Tensor::new(shape, data)
}

/// Decodes exactly one record; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut cursor = bytes;
    let t = read(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::format(
            "HST1",
            format!("{} trailing bytes", cursor.len()),
        ));
    }
    Ok(t)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(t)).map_err(Error::at_path(path))
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(Error::at_path(path))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_little_endian() {
        let t = Tensor::new([1, 2], vec![1.0f32, -2.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..5], b"HST1\x02");
        assert_eq!(&b[5..13], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[13..17], &1.0f32.to_le_bytes());
        assert_eq!(decode(&b).unwrap(), t);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let t = Tensor::new([3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let b = encode(&t);
        assert!(decode(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut long = b;
        long.push(0);
        assert!(decode(&long).is_err());
    }

    #[test]
    fn rank_zero_is_a_scalar_record() {
        let t = Tensor::new(Vec::<usize>::new(), vec![4.0f32]).unwrap();
        assert_eq!(decode(&encode(&t)).unwrap(), t);
    }
}
