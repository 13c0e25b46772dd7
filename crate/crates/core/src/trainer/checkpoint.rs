//! Named-array container.
//!
//! Layout (little-endian): magic `SPPZ`, u8 version, u32 array count; per
//! array u16 name length, UTF-8 name, u8 dtype code, u8 ndim, u32 dims, then
//! the row-major payload; a CRC32 of everything before it closes the file.
//! Dtype codes: 0 = f32, 1 = f64, 2 = u8 (used for the config text).

use std::path::Path;

use crate::autodiff::{DType, Elem, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPPZ";
pub const VERSION: u8 = 1;
const DTYPE_U8: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    fn code(&self) -> u8 {
        match self {
            ArrayData::F32(_) => DType::F32.code(),
            ArrayData::F64(_) => DType::F64.code(),
            ArrayData::U8(_) => DTYPE_U8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn from_tensor<E: Elem>(name: impl Into<String>, t: &Tensor<E>) -> Self {
        let mut bytes = Vec::with_capacity(t.numel() * E::DTYPE.size());
        t.data().iter().for_each(|v| v.write_le(&mut bytes));
        let data = match E::DTYPE {
            DType::F32 => ArrayData::F32(bytes.chunks_exact(4).map(f32::read_le).collect()),
            DType::F64 => ArrayData::F64(bytes.chunks_exact(8).map(f64::read_le).collect()),
        };
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn bytes(name: impl Into<String>, b: &[u8]) -> Self {
        Self {
            name: name.into(),
            shape: vec![b.len()],
            data: ArrayData::U8(b.to_vec()),
        }
    }

    /// The array as a tensor of `E`; the stored dtype must match.
    pub fn to_tensor<E: Elem>(&self) -> Result<Tensor<E>> {
        let mut bytes = Vec::new();
        match (&self.data, E::DTYPE) {
            (ArrayData::F32(v), DType::F32) => v.iter().for_each(|x| x.write_le(&mut bytes)),
            (ArrayData::F64(v), DType::F64) => v.iter().for_each(|x| x.write_le(&mut bytes)),
            _ => {
                return Err(Error::CorruptCheckpoint(format!(
                    "array `{}` has dtype code {}, expected {}",
                    self.name,
                    self.data.code(),
                    E::DTYPE.code()
                )))
            }
        }
        let data = bytes.chunks_exact(E::DTYPE.size()).map(E::read_le).collect();
        Tensor::new(&self.shape, data)
    }
}

/// Ordered collection of named arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrayFile {
    pub arrays: Vec<NamedArray>,
}

impl ArrayFile {
    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing array `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&u32_of(self.arrays.len(), "array count")?.to_le_bytes());
        for a in &self.arrays {
            let name = a.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Config(format!("array name `{}` is too long", a.name)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(a.data.code());
            let ndim = u8::try_from(a.shape.len()).map_err(|_| Error::Config(format!("`{}` has too many dims", a.name)))?;
            out.push(ndim);
            for &d in &a.shape {
                out.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
            }
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::shape("checkpoint array", &a.shape, &[a.data.len()]));
            }
            match &a.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U8(v) => out.extend_from_slice(v),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = *bytes.get(4).ok_or_else(|| corrupt("truncated header"))?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        if bytes.len() < 13 {
            return Err(corrupt("truncated header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 5 };
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| corrupt("array name is not UTF-8"))?
                .to_string();
            let code = r.u8()?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt("shape overflows"))?;
            let data = match code {
                0 => ArrayData::F32(r.take_n(numel, 4)?.chunks_exact(4).map(f32::read_le).collect()),
                1 => ArrayData::F64(r.take_n(numel, 8)?.chunks_exact(8).map(f64::read_le).collect()),
                DTYPE_U8 => ArrayData::U8(r.take(numel)?.to_vec()),
                other => return Err(Error::CorruptCheckpoint(format!("unknown dtype code {other}"))),
            };
            arrays.push(NamedArray { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after the last array"));
        }
        Ok(Self { arrays })
    }

    /// Writes atomically: a temporary sibling is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit the checkpoint format")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint("truncated array data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn take_n(&mut self, count: usize, size: usize) -> Result<&'a [u8]> {
        let n = count
            .checked_mul(size)
            .ok_or_else(|| Error::CorruptCheckpoint("array size overflows".into()))?;
        self.take(n)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
