//! Binary container for named dense tensors plus a JSON metadata block.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "TGTC"
//! version    u16      1
//! count      u32      number of tensors
//! meta_len   u32      length of the UTF-8 JSON metadata
//! meta       meta_len bytes
//! count × {
//!   name_len u16, name (UTF-8)
//!   dtype    u8       1 = f64, 2 = f32
//!   ndim     u8
//!   dims     ndim × u64
//!   payload  product(dims) × element size, row-major
//! }
//! ```

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TGTC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64 = 1,
    F32 = 2,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Values widened to f64 regardless of storage dtype.
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidInput(format!(
                "tensor '{name}' has {} values for shape {shape:?}",
                data.len()
            )));
        }
        if name.len() > u16::MAX as usize || shape.len() > u8::MAX as usize {
            return Err(Error::InvalidInput(format!("tensor '{name}' name or rank too large")));
        }
        Ok(Self {
            name,
            dtype: DType::F64,
            shape,
            data,
        })
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub metadata: Value,
    pub tensors: Vec<Tensor>,
}

impl TensorFile {
    pub fn new(metadata: Value) -> Self {
        Self {
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, tensor: Tensor) {
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::InvalidInput(format!("tensor file has no entry '{name}'")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.metadata)?;
        let mut out = Vec::with_capacity(
            14 + meta.len() + self.tensors.iter().map(|t| t.data.len() * 8 + 32).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype as u8);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match t.dtype {
                DType::F64 => t.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                DType::F32 => t
                    .data
                    .iter()
                    .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.error(0, "bad magic"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(r.error(4, &format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let meta_len = r.u32()? as usize;
        let meta_at = r.pos;
        let metadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| r.error(meta_at, &format!("metadata: {e}")))?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.error(at, "tensor name is not UTF-8"))?
                .to_string();
            let dtype_at = r.pos;
            let dtype = match r.u8()? {
                1 => DType::F64,
                2 => DType::F32,
                d => return Err(r.error(dtype_at, &format!("unknown dtype {d}"))),
            };
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(dtype.size()).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| r.error(at, &format!("tensor '{name}' payload exceeds file")))?;
            let payload = r.take(n * dtype.size())?;
            let data = match dtype {
                DType::F64 => payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                DType::F32 => payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            };
            tensors.push(Tensor {
                name,
                dtype,
                shape,
                data,
            });
        }
        if r.remaining() != 0 {
            return Err(r.error(r.pos, "trailing bytes after last tensor"));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn error(&self, offset: usize, message: &str) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            offset,
            message: message.to_string(),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.error(self.pos, &format!("unexpected end of file (need {n} bytes)")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> TensorFile {
        let mut f = TensorFile::new(json!({"kind": "test", "n": 3}));
        f.push(Tensor::new("a", vec![2, 3], (0..6).map(|i| i as f64 * 0.1).collect()).unwrap());
        f.push(Tensor::new("b", vec![4], vec![1.5, -2.0, 0.0, 3.25]).unwrap().with_dtype(DType::F32));
        f
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let back = TensorFile::from_bytes(&f.to_bytes().unwrap(), "mem").unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 10, bytes.len() - 1] {
            match TensorFile::from_bytes(&bytes[..cut], "mem") {
                Err(Error::Parse { offset, .. }) => assert!(offset <= cut),
                other => panic!("expected parse error at cut {cut}, got {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(TensorFile::from_bytes(&bytes, "m"), Err(Error::Parse { offset: 0, .. })));
        let mut bytes = sample().to_bytes().unwrap();
        let meta_len = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let dtype_at = 14 + meta_len + 2 + 1;
        bytes[dtype_at] = 9;
        assert!(matches!(
            TensorFile::from_bytes(&bytes, "m"),
            Err(Error::Parse { offset, .. }) if offset == dtype_at
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::new("x", vec![2, 2], vec![0.0; 3]).is_err());
    }
}
