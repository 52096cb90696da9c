//! The `IMLY` tensor container used for model checkpoints, language models and
//! matrix dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "IMLY" | version u32 | tensor count u32
//! per tensor: name_len u16 | name (UTF-8) | rank u8 | dims u32 × rank | f32 data, row-major
//! optional trailer: byte length u32 | UTF-8 text
//! ```
//!
//! The trailer carries auxiliary text such as a language model vocabulary.

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"IMLY";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContainerError {
    #[error("bad magic, not an IMLY file")]
    BadMagic,
    #[error("unsupported IMLY format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated IMLY file while reading {0}")]
    Truncated(String),
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("text block is not UTF-8")]
    BadText,
    #[error("duplicate tensor {0:?}")]
    Duplicate(String),
    #[error("missing tensor {0:?}")]
    Missing(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    Shape { name: String, found: Vec<usize>, expected: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "tensor data does not match dims");
        Self { name: name.into(), dims, data }
    }

    pub fn from_f64(name: impl Into<String>, dims: Vec<usize>, data: &[f64]) -> Self {
        Self::new(name, dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub tensors: Vec<Tensor>,
    pub text: Option<String>,
}

impl Container {
    pub fn push(&mut self, tensor: Tensor) {
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ContainerError> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, dims: &[usize]) -> Result<&Tensor, ContainerError> {
        let t = self.get(name)?;
        if t.dims != dims {
            return Err(ContainerError::Shape { name: name.into(), found: t.dims.clone(), expected: dims.to_vec() });
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(text) = &self.text {
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic").map_err(|_| ContainerError::BadMagic)? != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors: Vec<Tensor> = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?).map_err(|_| ContainerError::BadName)?.to_string();
            if tensors.iter().any(|t| t.name == name) {
                return Err(ContainerError::Duplicate(name));
            }
            let rank = r.take(1, "rank")?[0] as usize;
            let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| ContainerError::Truncated(name.clone()))?, &name)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Tensor { name, dims, data });
        }
        let text = if r.pos < bytes.len() {
            let len = r.u32("text length")? as usize;
            let raw = r.take(len, "text")?;
            Some(std::str::from_utf8(raw).map_err(|_| ContainerError::BadText)?.to_string())
        } else {
            None
        };
        Ok(Self { tensors, text })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ContainerError> {
        if self.bytes.len() - self.pos < n {
            return Err(ContainerError::Truncated(what.to_string()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
