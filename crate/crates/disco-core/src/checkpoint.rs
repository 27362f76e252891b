//! Single-file checkpoint format.
//!
//! Layout: 4-byte magic `MDCK`, one version byte, then a u32 entry count
//! followed by entries sorted by path. Each entry is
//! `u16 path_len | path utf-8 | u8 dtype tag | u8 ndim | ndim x u32 extents |
//! little-endian scalar payload`. Sorted paths make the bytes deterministic
//! for a given parameter map.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MDCK";
pub const VERSION: u8 = 1;

pub fn write_checkpoint<T: Scalar>(
    path: &Path,
    params: &BTreeMap<String, Tensor<T>>,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!("path too long: `{name}`")));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(T::DTYPE.tag());
        let shape = tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!("rank too high for `{name}`")));
        }
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut buf);
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<BTreeMap<String, Tensor<T>>> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let version = cur.take(1)?[0];
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("non-utf8 parameter path".to_string()))?;
        let tag = cur.take(1)?[0];
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::Format(format!("unknown dtype tag {tag} for `{name}`")))?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "checkpoint dtype {dtype} does not match requested {}",
                T::DTYPE
            )));
        }
        let ndim = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let width = T::DTYPE.size_bytes();
        let payload = cur.take(numel * width)?;
        let data: Vec<T> = payload.chunks_exact(width).map(T::read_le).collect();
        out.insert(name, Tensor::new(shape, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last entry",
            bytes.len() - cur.pos
        )));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".to_string()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_map() -> BTreeMap<String, Tensor<f64>> {
        let mut m = BTreeMap::new();
        m.insert(
            "shared/w".to_string(),
            Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-17, -0.0]).unwrap(),
        );
        m.insert(
            "expert/0/ffn/w1".to_string(),
            Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
        );
        m
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let map = sample_map();
        write_checkpoint(&path, &map).unwrap();
        let back = read_checkpoint::<f64>(&path).unwrap();
        assert_eq!(back.len(), map.len());
        for (k, v) in &map {
            assert!(back[k].bit_eq(v), "mismatch at {k}");
        }
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let map = sample_map();
        write_checkpoint(&p1, &map).unwrap();
        write_checkpoint(&p2, &map).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn arbitrary_maps_roundtrip_bit_exact(
                entries in proptest::collection::btree_map(
                    "[a-z/]{1,24}",
                    (
                        proptest::collection::vec(1usize..5, 1..3),
                        proptest::collection::vec(any::<f64>(), 1..40),
                    ),
                    1..6,
                )
            ) {
                let mut map = BTreeMap::new();
                for (name, (shape, data)) in entries {
                    let numel: usize = shape.iter().product();
                    let mut buf = data;
                    buf.resize(numel, 0.0);
                    map.insert(name, Tensor::<f64>::new(shape, buf).unwrap());
                }
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("p.ckpt");
                write_checkpoint(&path, &map).unwrap();
                let back = read_checkpoint::<f64>(&path).unwrap();
                prop_assert_eq!(back.len(), map.len());
                for (k, v) in &map {
                    prop_assert!(back[k].bit_eq(v));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            read_checkpoint::<f64>(&path).unwrap_err(),
            Error::Format(_)
        ));

        let good = dir.path().join("b.ckpt");
        write_checkpoint(&good, &sample_map()).unwrap();
        assert!(matches!(
            read_checkpoint::<f32>(&good).unwrap_err(),
            Error::Format(_)
        ));
    }
}
