//! AVFS tensor container.
//!
//! Little-endian layout:
//!
//! ```text
//! "AVFS" | version: u32 | record*
//! record = name_len: u16 | name: [u8; name_len] | dtype: u8 | rank: u8
//!          | dims: [u64; rank] | values
//! ```
//!
//! Records run until end of file. dtype 1 is `f32` (feature files),
//! 2 is `f64` (checkpoints) and 3 is raw bytes (embedded JSON metadata).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AVFS";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    Bytes(Vec<u8>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
            TensorData::Bytes(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::Bytes(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<u64>, data: TensorData) -> Result<Self> {
        let name = name.into();
        let expected: u64 = dims.iter().product();
        if expected != data.len() as u64 {
            return Err(Error::Config(format!(
                "tensor {name}: dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if name.len() > u16::MAX as usize || dims.len() > u8::MAX as usize {
            return Err(Error::Config(format!("tensor {name}: name or rank too long")));
        }
        Ok(Tensor { name, dims, data })
    }

    /// The dims as a `(rows, cols)` pair, for rank-2 tensors.
    pub fn matrix_shape(&self) -> Option<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Some((r as usize, c as usize)),
            _ => None,
        }
    }
}

pub fn write<W: Write>(mut w: W, tensors: &[Tensor]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u16).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[t.data.code(), t.dims.len() as u8])?;
        for d in &t.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        match &t.data {
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::Bytes(v) => w.write_all(v)?,
        }
    }
    Ok(())
}

pub fn to_bytes(tensors: &[Tensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf, tensors).expect("writing to a Vec cannot fail");
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Parses a whole container. `origin` only labels errors.
pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Vec<Tensor>> {
    parse(bytes).map_err(|m| Error::format(origin, m))
}

fn parse(bytes: &[u8]) -> std::result::Result<Vec<Tensor>, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err("not an AVFS container (bad magic)".into());
    }
    let version = u32::from_le_bytes(c.array()?);
    if version != VERSION {
        return Err(format!("unsupported AVFS version {version}"));
    }
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let name_len = u16::from_le_bytes(c.array()?) as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let [code, rank] = c.array()?;
        let dims = (0..rank)
            .map(|_| c.array().map(u64::from_le_bytes))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| format!("tensor {name}: dims {dims:?} overflow"))?;
        let data = match code {
            1 => TensorData::F32(
                c.take(count.checked_mul(4).ok_or("size overflow")?)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            2 => TensorData::F64(
                c.take(count.checked_mul(8).ok_or("size overflow")?)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            3 => TensorData::Bytes(c.take(count)?.to_vec()),
            other => return Err(format!("tensor {name}: unknown dtype code {other}")),
        };
        out.push(Tensor { name, dims, data });
    }
    Ok(out)
}

pub fn read_file(path: &Path) -> Result<Vec<Tensor>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

pub fn write_file(path: &Path, tensors: &[Tensor]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, to_bytes(tensors)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new("ab", vec![1, 2], TensorData::F32(vec![1.0, -2.0])).unwrap();
        let bytes = to_bytes(&[t]);
        let mut expected = b"AVFS".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&[1, 2]);
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = Path::new("x.avfs");
        assert!(from_bytes(b"AVFX\x01\0\0\0", p).is_err());
        let t = Tensor::new("v", vec![3], TensorData::F64(vec![1.0, 2.0, 3.0])).unwrap();
        let bytes = to_bytes(&[t]);
        let err = from_bytes(&bytes[..bytes.len() - 1], p).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn rejects_unknown_dtype() {
        let mut bytes = b"AVFS".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(b"z");
        bytes.extend_from_slice(&[9, 0]);
        assert!(from_bytes(&bytes, Path::new("z")).is_err());
    }

    #[test]
    fn dims_must_match_values() {
        assert!(Tensor::new("v", vec![2, 2], TensorData::F32(vec![0.0; 3])).is_err());
    }

    proptest! {
        #[test]
        fn containers_round_trip(
            rows in 0usize..6,
            cols in 0usize..5,
            seed in prop::collection::vec(-1e6f32..1e6, 30),
            meta in prop::collection::vec(any::<u8>(), 0..20),
        ) {
            let values: Vec<f32> = seed.iter().cycle().take(rows * cols).copied().collect();
            let tensors = vec![
                Tensor::new("visual", vec![rows as u64, cols as u64], TensorData::F32(values)).unwrap(),
                Tensor::new("meta", vec![meta.len() as u64], TensorData::Bytes(meta)).unwrap(),
                Tensor::new("w", vec![2], TensorData::F64(vec![f64::MIN_POSITIVE, -0.0])).unwrap(),
            ];
            let bytes = to_bytes(&tensors);
            let back = from_bytes(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(&back, &tensors);
            prop_assert_eq!(to_bytes(&back), bytes);
        }
    }
}
