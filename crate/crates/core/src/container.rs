//! Named-tensor container file ("FM3D").
//!
//! Layout, all little-endian:
//!   magic "FM3D" | version u32 = 1 | tensor count u32 |
//!   per tensor: name length u16, name UTF-8, rank u8, dims u32 each,
//!   payload of 8-byte words (f64 or i64 depending on the tensor).
//!
//! The element type is not tagged in the file; readers pick it per name
//! via [`Container::f64_tensor`] / [`Container::i64_tensor`]. Face models,
//! cluster sets, and network checkpoints all use this one format.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"FM3D";
pub const VERSION: u32 = 1;

/// Raw tensor payload: dims plus untyped 8-byte words.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    words: Vec<[u8; 8]>,
}

impl RawTensor {
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            dims,
            words: data.iter().map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn from_i64(dims: Vec<usize>, data: &[i64]) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            dims,
            words: data.iter().map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.words.iter().map(|w| f64::from_le_bytes(*w)).collect()
    }

    pub fn as_i64(&self) -> Vec<i64> {
        self.words.iter().map(|w| i64::from_le_bytes(*w)).collect()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// In-memory view of a container file; insertion order is preserved on write
/// via sorted names so round-trips are byte-stable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    tensors: BTreeMap<String, RawTensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_f64(&mut self, name: &str, dims: Vec<usize>, data: &[f64]) {
        self.tensors
            .insert(name.to_string(), RawTensor::from_f64(dims, data));
    }

    pub fn put_i64(&mut self, name: &str, dims: Vec<usize>, data: &[i64]) {
        self.tensors
            .insert(name.to_string(), RawTensor::from_i64(dims, data));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn raw(&self, name: &str) -> Result<&RawTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::format(format!("missing tensor '{name}'")))
    }

    pub fn f64_tensor(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let t = self.raw(name)?;
        Ok((t.dims.clone(), t.as_f64()))
    }

    pub fn i64_tensor(&self, name: &str) -> Result<(Vec<usize>, Vec<i64>)> {
        let t = self.raw(name)?;
        Ok((t.dims.clone(), t.as_i64()))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let name_bytes = name.as_bytes();
            if name_bytes.len() > u16::MAX as usize {
                return Err(Error::invalid(format!("tensor name too long: {name}")));
            }
            w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
            w.write_all(name_bytes)?;
            if t.dims.len() > u8::MAX as usize {
                return Err(Error::invalid(format!("tensor rank too large: {name}")));
            }
            w.write_all(&[t.dims.len() as u8])?;
            for &d in &t.dims {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for word in &t.words {
                w.write_all(word)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if magic != MAGIC {
            return Err(Error::format("bad magic bytes, not an FM3D container"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::format(format!(
                "unsupported container version {version}"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            read_exact(&mut r, &mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::format("tensor name is not UTF-8"))?;
            let mut rank = [0u8; 1];
            read_exact(&mut r, &mut rank)?;
            let mut dims = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                dims.push(read_u32(&mut r)? as usize);
            }
            let len: usize = dims.iter().product();
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                let mut w = [0u8; 8];
                read_exact(&mut r, &mut w)?;
                words.push(w);
            }
            tensors.insert(name, RawTensor { dims, words });
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format("truncated container file"))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.put_f64(
            "weights",
            vec![2, 3],
            &[1.0, -2.5, 3.0, 0.0, f64::MIN_POSITIVE, 9.9],
        );
        c.put_i64("indices", vec![4], &[0, -1, 7, i64::MAX]);
        c
    }

    #[test]
    fn round_trip_is_lossless() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Container::read_from(buf.as_slice()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            Container::read_from(buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncation_is_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            Container::read_from(buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf[4] = 9;
        assert!(matches!(
            Container::read_from(buf.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
