//! Tensor blob format: four little-endian `u64` dimensions (N, C, H, W)
//! followed by `N·C·H·W` little-endian `f32` values. Blobs are concatenated
//! back to back in checkpoint files.

use std::io::{Read, Write};

use super::{Shape, Tensor};
use crate::error::{Error, Result};

const HEADER_BYTES: usize = 32;

pub fn write_tensor<W: Write>(out: &mut W, t: &Tensor<f32>) -> std::io::Result<()> {
    for d in t.shape().dims() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.data().len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn write_tensors<W: Write>(out: &mut W, ts: &[&Tensor<f32>]) -> std::io::Result<()> {
    for t in ts {
        write_tensor(out, t)?;
    }
    Ok(())
}

/// Decodes one tensor from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor<f32>, usize)> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Parse(format!(
            "tensor header needs {HEADER_BYTES} bytes, {} available",
            bytes.len()
        )));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let raw = u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8-byte slice"));
        *d = usize::try_from(raw).map_err(|_| Error::Parse(format!("dimension {raw} does not fit in memory")))?;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Parse(format!("shape {dims:?} overflows")))?;
    let body = count
        .checked_mul(4)
        .ok_or_else(|| Error::Parse(format!("shape {dims:?} overflows")))?;
    let rest = &bytes[HEADER_BYTES..];
    if rest.len() < body {
        return Err(Error::Parse(format!(
            "tensor {dims:?} needs {body} data bytes, {} available",
            rest.len()
        )));
    }
    let data: Vec<f32> = rest[..body]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse("tensor contains non-finite values".into()));
    }
    let t = Tensor::from_vec(Shape::new(dims[0], dims[1], dims[2], dims[3]), data)?;
    Ok((t, HEADER_BYTES + body))
}

pub fn read_tensor<R: Read>(input: &mut R) -> Result<Tensor<f32>> {
    let mut header = [0u8; HEADER_BYTES];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::Parse(format!("tensor header: {e}")))?;
    let mut count = 1usize;
    for i in 0..4 {
        let d = u64::from_le_bytes(header[i * 8..i * 8 + 8].try_into().expect("8-byte slice"));
        count = count
            .checked_mul(usize::try_from(d).map_err(|_| Error::Parse("dimension too large".into()))?)
            .ok_or_else(|| Error::Parse("shape overflows".into()))?;
    }
    let body = count
        .checked_mul(4)
        .ok_or_else(|| Error::Parse("shape overflows".into()))?;
    let mut buf = header.to_vec();
    input
        .take(body as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::Parse(format!("tensor body: {e}")))?;
    decode_tensor(&buf).map(|(t, _)| t)
}

/// Decodes a whole buffer of concatenated blobs; trailing bytes are an error.
pub fn read_tensors(bytes: &[u8]) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::new();
    let mut off = 0;
    while off < bytes.len() {
        let (t, used) = decode_tensor(&bytes[off..])?;
        out.push(t);
        off += used;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_four_u64_then_f32_data() {
        let t = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.5f32, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), 32 + 8);
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[32..36], &1.5f32.to_le_bytes());
    }

    #[test]
    fn truncated_and_oversized_inputs_are_rejected() {
        assert!(decode_tensor(&[0u8; 10]).is_err());
        let mut buf = Vec::new();
        for d in [u64::MAX, 2, 2, 2] {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        assert!(decode_tensor(&buf).is_err());
        let mut buf = Vec::new();
        for d in [1u64, 1, 1, 3] {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        buf.extend_from_slice(&[0u8; 8]);
        assert!(decode_tensor(&buf).is_err());
    }

    proptest! {
        #[test]
        fn blobs_round_trip(dims in (1usize..3, 1usize..4, 1usize..5, 1usize..5),
                            seed in any::<u64>()) {
            let shape = Shape::new(dims.0, dims.1, dims.2, dims.3);
            let data: Vec<f32> = (0..shape.len())
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) % 2001) as f32 - 1000.0) / 7.0)
                .collect();
            let a = Tensor::from_vec(shape, data).unwrap();
            let b = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.25, 4.0]).unwrap();
            let mut buf = Vec::new();
            write_tensors(&mut buf, &[&a, &b]).unwrap();
            let back = read_tensors(&buf).unwrap();
            prop_assert_eq!(&back[0], &a);
            prop_assert_eq!(&back[1], &b);
            let one = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(one, a);
        }
    }
}
