//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "VOCABRL\0" | version u32 | kind str
//! meta count u32   | (key str, value str)*
//! tensor count u32 | (name str, dtype u8, ndim u32, dims u64*, payload)*
//! ```
//!
//! A `str` is a u32 byte length followed by UTF-8. Payloads are row-major
//! values in the declared dtype, so round trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"VOCABRL\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dtype: DType,
    pub shape: Vec<usize>,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    tensors: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Checkpoint { kind: kind.into(), ..Default::default() }
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta key {key:?}")))
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let s = self.meta_str(key)?;
        s.parse().map_err(|_| Error::Checkpoint(format!("bad value {s:?} for {key:?}")))
    }

    pub fn put<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let mut bytes = Vec::with_capacity(t.len() * T::DTYPE.size());
        for v in t.data() {
            v.write_le(&mut bytes);
        }
        self.tensors.insert(name.into(), StoredTensor { dtype: T::DTYPE, shape: t.shape().to_vec(), bytes });
    }

    pub fn put_vec<T: Scalar>(&mut self, name: impl Into<String>, v: &[T]) {
        self.put(name, &Tensor::vector(v.to_vec()));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn get<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let st = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
        if st.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} stored as {:?}, requested {:?}",
                st.dtype,
                T::DTYPE
            )));
        }
        let data = st.bytes.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
        Ok(Tensor::new(&st.shape, data)?)
    }

    pub fn get_vec<T: Scalar>(&self, name: &str) -> Result<Vec<T>> {
        Ok(self.get::<T>(name)?.into_vec())
    }

    /// Stores every parameter under `prefix` + its name.
    pub fn put_params<T: Scalar>(&mut self, prefix: &str, params: &ParamStore<T>) {
        for (_, name, t) in params.iter() {
            self.put(format!("{prefix}{name}"), t);
        }
    }

    /// Overwrites every parameter from `prefix` + its name; shapes must match.
    pub fn load_params<T: Scalar>(&self, prefix: &str, params: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let name = format!("{prefix}{}", params.name(id));
            let t = self.get::<T>(&name)?;
            if t.shape() != params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "shape of {name:?} is {:?}, model expects {:?}",
                    t.shape(),
                    params.get(id).shape()
                )));
            }
            *params.get_mut(id) = t;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(t.dtype.code());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut ck = Checkpoint::new(r.string()?);
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let code = r.take(1)?[0];
            let dtype = DType::from_code(code).ok_or_else(|| Error::Checkpoint(format!("bad dtype code {code}")))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let payload = r.take(n * dtype.size())?.to_vec();
            ck.tensors.insert(name, StoredTensor { dtype, shape, bytes: payload });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint holds a model of `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)))
        }
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ck = Checkpoint::new("test");
        ck.set_meta("d", 4);
        let a = Tensor::<f64>::from_fn(&[3, 2], |i| (i as f64).sin() / 3.0);
        let b = Tensor::<f32>::vector(vec![f32::MIN_POSITIVE, -0.0, 1e-30, 7.25]);
        ck.put("a", &a);
        ck.put("b", &b);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let a2 = back.get::<f64>("a").unwrap();
        assert!(a.data().iter().zip(a2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.get::<f32>("b").unwrap().data()[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(back.meta_parse::<usize>("d").unwrap(), 4);
        assert!(back.get::<f32>("a").is_err());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut ck = Checkpoint::new("x");
        ck.put("t", &Tensor::<f64>::zeros(&[4]));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
