//! Binary checkpoint container.
//!
//! ```text
//! "RELG"            4 bytes
//! version           u32 LE
//! record*           until end of file
//!   name_len        u32 LE
//!   name            UTF-8 bytes
//!   dtype           u8   (0 f32, 1 f64, 2 u8, 3 u64)
//!   rank            u32 LE
//!   dims            rank × u64 LE
//!   values          product(dims) little-endian elements
//! ```

use std::path::Path;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RELG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

impl Values {
    fn tag(&self) -> u8 {
        match self {
            Values::F32(_) => 0,
            Values::F64(_) => 1,
            Values::U8(_) => 2,
            Values::U64(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            Values::F32(v) => v.len(),
            Values::F64(v) => v.len(),
            Values::U8(v) => v.len(),
            Values::U64(v) => v.len(),
        }
    }

    fn type_name(&self) -> &'static str {
        ["f32", "f64", "u8", "u64"][self.tag() as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Values,
}

/// Ordered list of named records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, values: Values) {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        self.records.push(Record {
            name: name.into(),
            dims,
            values,
        });
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: impl Into<String>, dims: &[usize], data: &[T]) {
        let values = match T::DTYPE_TAG {
            0 => Values::F32(data.iter().map(|v| v.as_f64() as f32).collect()),
            _ => Values::F64(data.iter().map(|v| v.as_f64()).collect()),
        };
        self.push(name, dims.to_vec(), values);
    }

    pub fn push_u64(&mut self, name: impl Into<String>, values: Vec<u64>) {
        self.push(name, vec![values.len()], Values::U64(values));
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.push(name, vec![bytes.len()], Values::U8(bytes));
    }

    pub fn get(&self, name: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing record `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.records.iter().any(|r| r.name == name)
    }

    /// Records whose name starts with `prefix`, in file order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.name.starts_with(prefix))
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<(Vec<usize>, Vec<T>)> {
        let r = self.get(name)?;
        let data = match (&r.values, T::DTYPE_TAG) {
            (Values::F32(v), 0) => v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect(),
            (Values::F64(v), 1) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            (other, _) => {
                return Err(Error::Checkpoint(format!(
                    "record `{name}` holds {}, expected {:?} precision",
                    other.type_name(),
                    T::PRECISION
                )))
            }
        };
        Ok((r.dims.clone(), data))
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.get(name)?.values {
            Values::U64(v) => Ok(v),
            other => Err(Error::Checkpoint(format!("record `{name}` holds {}, expected u64", other.type_name()))),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match &self.get(name)?.values {
            Values::F64(v) => Ok(v),
            other => Err(Error::Checkpoint(format!("record `{name}` holds {}, expected f64", other.type_name()))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match &self.get(name)?.values {
            Values::U8(v) => Ok(v),
            other => Err(Error::Checkpoint(format!("record `{name}` holds {}, expected u8", other.type_name()))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.values.tag());
            out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for &d in &r.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &r.values {
                Values::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::U8(v) => out.extend_from_slice(v),
                Values::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut cur = Cursor { bytes, pos: 4 };
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let mut ck = Checkpoint::new();
        while cur.pos < bytes.len() {
            let name_len = cur.u32("name length")? as usize;
            let name = String::from_utf8(cur.take(name_len, "name")?.to_vec())
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let tag = cur.take(1, "dtype")?[0];
            let rank = cur.u32("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = cur.u64("dims")?;
                dims.push(usize::try_from(d).map_err(|_| Error::Checkpoint(format!("dimension {d} too large")))?);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("record `{name}` is too large")))?;
            let width = match tag {
                0 => 4,
                1 | 3 => 8,
                2 => 1,
                t => return Err(Error::Checkpoint(format!("record `{name}` has unknown dtype tag {t}"))),
            };
            let raw = cur.take(
                n.checked_mul(width)
                    .ok_or_else(|| Error::Checkpoint(format!("record `{name}` is too large")))?,
                &name,
            )?;
            let values = match tag {
                0 => Values::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => Values::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                2 => Values::U8(raw.to_vec()),
                _ => Values::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
            };
            ck.records.push(Record { name, dims, values });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
