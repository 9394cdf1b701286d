use std::io::{Read, Write};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"T32\0";

/// Writes `magic, u8 rank, rank × u32 dims, f32 payload`, all little-endian.
///
/// Values are narrowed to `f32` regardless of the tensor element type.
pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::InvalidArgument(format!("rank {} exceeds 255", t.rank())))?;
    w.write_all(&TENSOR_MAGIC)?;
    w.write_all(&[rank])?;
    for &d in t.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "tensor header")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(&TENSOR_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let mut rank = [0u8; 1];
    read_exact(r, &mut rank, "tensor rank")?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 4];
        read_exact(r, &mut d, "tensor dims")?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut payload = vec![0u8; numel * 4];
    read_exact(r, &mut payload, "tensor payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::new(shape, data)
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    what: what.to_string(),
                    expected: buf.len() as u64,
                    actual: filled as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
