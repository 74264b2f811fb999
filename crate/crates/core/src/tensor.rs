//! Dense f32 tensors and their binary container, shared by the dataset files
//! and the remote policy protocol.
//!
//! Layout: magic `BAGB`, format version (u16 LE), rank (u8), one u32 LE per
//! dimension, then the values as f32 LE in row-major (channels-last) order.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BAGB";
pub const BUFFER_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Format(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if dims.len() > usize::from(u8::MAX) {
            return Err(Error::Format(format!("rank {} too large", dims.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn encoded_len(&self) -> usize {
        4 + 2 + 1 + 4 * self.dims.len() + 4 * self.data.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&BUFFER_VERSION.to_le_bytes());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Format("truncated BAGB buffer".into());
        if bytes.len() < 7 {
            return Err(short());
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("missing BAGB magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != BUFFER_VERSION {
            return Err(Error::Format(format!(
                "unsupported BAGB version {version}, expected {BUFFER_VERSION}"
            )));
        }
        let rank = usize::from(bytes[6]);
        let header = 7 + 4 * rank;
        if bytes.len() < header {
            return Err(short());
        }
        let dims: Vec<usize> = bytes[7..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
        let body = &bytes[header..];
        if body.len() != 4 * count {
            return Err(Error::Format(format!(
                "dims {dims:?} need {} payload bytes, got {}",
                4 * count,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Format(format!("reading BAGB buffer: {e}")))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, -1.5]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"BAGB");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..11], &[2, 0, 0, 0]);
        assert_eq!(&bytes[11..15], &[3, 0, 0, 0]);
        assert_eq!(&bytes[bytes.len() - 4..], &(-1.5f32).to_le_bytes());
        assert_eq!(bytes.len(), t.encoded_len());
        assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn rejects_bad_buffers() {
        let t = Tensor::new(vec![4], vec![1.0; 4]).unwrap();
        let bytes = t.to_bytes();
        assert!(Tensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Tensor::from_bytes(&bad).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
