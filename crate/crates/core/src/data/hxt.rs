//! HXT1 tensor files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 0..4         | ASCII `HXT1`                     |
//! | 4            | dtype code (0 = u8, 1 = f32)     |
//! | 5            | rank                             |
//! | 6..8         | zero                             |
//! | 8..8+8*rank  | dims, one u64 each               |
//! | then         | row-major payload                |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const MAGIC: &[u8; 4] = b"HXT1";
pub const HEADER_LEN: usize = 8;

/// A tensor of either storable dtype.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    U8(Tensor<u8>),
    F32(Tensor<f32>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::U8(t) => t.shape(),
            AnyTensor::F32(t) => t.shape(),
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            AnyTensor::U8(_) => u8::NAME,
            AnyTensor::F32(_) => f32::NAME,
        }
    }

    pub fn into_f32(self) -> Result<Tensor<f32>> {
        match self {
            AnyTensor::F32(t) => Ok(t),
            AnyTensor::U8(_) => Err(Error::Format("expected an f32 tensor, found u8".into())),
        }
    }

    pub fn into_u8(self) -> Result<Tensor<u8>> {
        match self {
            AnyTensor::U8(t) => Ok(t),
            AnyTensor::F32(_) => Err(Error::Format("expected a u8 tensor, found f32".into())),
        }
    }
}

impl From<Tensor<u8>> for AnyTensor {
    fn from(t: Tensor<u8>) -> Self {
        AnyTensor::U8(t)
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

pub fn encode<T: Element>(tensor: &Tensor<T>) -> Result<Vec<u8>> {
    let rank = u8::try_from(tensor.rank())
        .map_err(|_| Error::Format(format!("rank {} does not fit the header", tensor.rank())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * tensor.rank() + tensor.len() * T::SIZE);
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE_CODE);
    out.push(rank);
    out.extend_from_slice(&[0, 0]);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn write_tensor<T: Element, W: Write>(mut w: W, tensor: &Tensor<T>) -> Result<()> {
    w.write_all(&encode(tensor)?)?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn read_payload<T: Element, R: Read>(r: &mut R, shape: &[usize], count: usize) -> Result<Tensor<T>> {
    let bytes_len = count
        .checked_mul(T::SIZE)
        .ok_or_else(|| Error::Format("dims overflow".into()))?;
    let mut bytes = Vec::new();
    r.take(bytes_len as u64).read_to_end(&mut bytes)?;
    if bytes.len() != bytes_len {
        return Err(Error::Format(format!(
            "truncated payload: expected {bytes_len} bytes, found {}",
            bytes.len()
        )));
    }
    let data = bytes.chunks_exact(T::SIZE).map(T::read_le).collect();
    Tensor::from_vec(shape, data)
}

/// Reads one tensor from a stream, consuming exactly its bytes.
pub fn read_tensor<R: Read>(mut r: R) -> Result<AnyTensor> {
    let mut header = [0u8; HEADER_LEN];
    read_exact_or(&mut r, &mut header, "header")?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dtype = header[4];
    let rank = header[5] as usize;
    if header[6] != 0 || header[7] != 0 {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    if dtype > 1 {
        return Err(Error::Format(format!("unknown dtype code {dtype}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for _ in 0..rank {
        let mut d = [0u8; 8];
        read_exact_or(&mut r, &mut d, "dims")?;
        let d = usize::try_from(u64::from_le_bytes(d)).map_err(|_| Error::Format("dims overflow".into()))?;
        count = count.checked_mul(d).ok_or_else(|| Error::Format("dims overflow".into()))?;
        shape.push(d);
    }
    Ok(match dtype {
        0 => AnyTensor::U8(read_payload::<u8, _>(&mut r, &shape, count)?),
        _ => AnyTensor::F32(read_payload::<f32, _>(&mut r, &shape, count)?),
    })
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let mut cursor = bytes;
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after tensor", cursor.len())));
    }
    Ok(t)
}

pub fn save_tensor<T: Element>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(tensor)?)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    decode(&fs::read(path)?)
}
