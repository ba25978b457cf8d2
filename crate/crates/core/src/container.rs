//! Versioned binary container for parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes
//! version      u32
//! meta count   u32, then per entry: key (u16 len + utf8), value (u32 len + utf8)
//! entry count  u32, then per entry: name (u16 len + utf8),
//!              rank u8, extents u32 x rank, values f32 LE
//! ```
//!
//! Values are stored as 32-bit floats; save -> load -> save round trips are
//! byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic at offset 0: expected {expected:?}, got {got:?}")]
    BadMagic { expected: [u8; 4], got: [u8; 4] },
    #[error("unsupported version {got} (supported {supported}) at offset 4")]
    BadVersion { got: u32, supported: u32 },
    #[error("truncated container at offset {offset}: {context}")]
    Truncated { offset: u64, context: &'static str },
    #[error("malformed container at offset {offset}: {context}")]
    Malformed { offset: u64, context: String },
}

pub type Result<T> = std::result::Result<T, ContainerError>;

/// A checkpoint: string metadata plus named tensors, both in sorted order.
#[derive(Debug, Default, Clone)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub entries: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.entries.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = CountingWriter::new(BufWriter::new(File::create(path)?));
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_u32(CHECKPOINT_VERSION)?;
        w.write_u32(self.meta.len() as u32)?;
        for (k, v) in &self.meta {
            w.write_str16(k)?;
            w.write_str32(v)?;
        }
        w.write_u32(self.entries.len() as u32)?;
        for (name, t) in &self.entries {
            w.write_str16(name)?;
            let shape = t.shape();
            w.write_all(&[shape.len() as u8])?;
            for &d in shape {
                w.write_u32(d as u32)?;
            }
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.into_inner().flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = CountingReader::new(BufReader::new(File::open(path)?));
        let mut magic = [0u8; 4];
        r.read_exact_at(&mut magic, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ContainerError::BadMagic {
                expected: CHECKPOINT_MAGIC,
                got: magic,
            });
        }
        let version = r.read_u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(ContainerError::BadVersion {
                got: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let mut ck = Checkpoint::new();
        let meta_count = r.read_u32("meta count")?;
        for _ in 0..meta_count {
            let k = r.read_str16("meta key")?;
            let v = r.read_str32("meta value")?;
            ck.meta.insert(k, v);
        }
        let entry_count = r.read_u32("entry count")?;
        for _ in 0..entry_count {
            let name = r.read_str16("entry name")?;
            let mut rank = [0u8; 1];
            r.read_exact_at(&mut rank, "entry rank")?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                shape.push(r.read_u32("entry extent")? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 4];
            for _ in 0..n {
                r.read_exact_at(&mut buf, "entry values")?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
            let offset = r.offset;
            let t = Tensor::from_vec(shape, data).map_err(|e| ContainerError::Malformed {
                offset,
                context: e.to_string(),
            })?;
            ck.entries.insert(name, t);
        }
        Ok(ck)
    }
}

pub(crate) struct CountingWriter<W: Write> {
    inner: W,
}

impl<W: Write> CountingWriter<W> {
    pub fn new(inner: W) -> Self {
        CountingWriter { inner }
    }
    pub fn into_inner(self) -> W {
        self.inner
    }
    pub fn write_all(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.inner.write_all(bytes)
    }
    pub fn write_u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    pub fn write_f64(&mut self, v: f64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    pub fn write_str16(&mut self, s: &str) -> io::Result<()> {
        self.inner.write_all(&(s.len() as u16).to_le_bytes())?;
        self.inner.write_all(s.as_bytes())
    }
    pub fn write_str32(&mut self, s: &str) -> io::Result<()> {
        self.inner.write_all(&(s.len() as u32).to_le_bytes())?;
        self.inner.write_all(s.as_bytes())
    }
}

pub(crate) struct CountingReader<R: Read> {
    inner: R,
    pub offset: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    pub fn read_exact_at(&mut self, buf: &mut [u8], context: &'static str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(ContainerError::Truncated {
                offset: self.offset,
                context,
            }),
            Err(e) => Err(e.into()),
        }
    }

    pub fn read_u32(&mut self, context: &'static str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact_at(&mut buf, context)?;
        Ok(u32::from_le_bytes(buf))
    }

    pub fn read_f64(&mut self, context: &'static str) -> Result<f64> {
        let mut buf = [0u8; 8];
        self.read_exact_at(&mut buf, context)?;
        Ok(f64::from_le_bytes(buf))
    }

    pub fn read_str16(&mut self, context: &'static str) -> Result<String> {
        let mut len = [0u8; 2];
        self.read_exact_at(&mut len, context)?;
        self.read_str_body(u16::from_le_bytes(len) as usize, context)
    }

    pub fn read_str32(&mut self, context: &'static str) -> Result<String> {
        let len = self.read_u32(context)?;
        self.read_str_body(len as usize, context)
    }

    fn read_str_body(&mut self, len: usize, context: &'static str) -> Result<String> {
        let mut bytes = vec![0u8; len];
        self.read_exact_at(&mut bytes, context)?;
        String::from_utf8(bytes).map_err(|e| ContainerError::Malformed {
            offset: self.offset,
            context: format!("{context}: {e}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert_meta("kind", "test");
        ck.insert_meta("steps", 17u32);
        ck.insert(
            "w",
            Tensor::from_vec(vec![2, 3], vec![0.5, -1.25, 3.0, 0.0, 8.5, -0.125]).unwrap(),
        );
        ck.insert("b", Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        ck
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ck = sample();
        ck.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.meta, ck.meta);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        std::fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            Checkpoint::load(&p),
            Err(ContainerError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_body_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        sample().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        match Checkpoint::load(&p) {
            Err(ContainerError::Truncated { offset, .. }) => assert!(offset > 0),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.ckpt");
        std::fs::write(&p, b"").unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}
