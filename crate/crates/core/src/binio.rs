//! Little-endian readers and writers shared by the feature, label and model
//! file formats.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    /// Stores `v` rounded to the nearest `f32`.
    pub fn f32(&mut self, v: f64) {
        self.buf.extend_from_slice(&(v as f32).to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn save(self, path: &Path) -> Result<()> {
        std::fs::write(path, self.buf).map_err(|e| Error::io(path, e))
    }
}

pub(crate) struct Reader {
    path: PathBuf,
    bytes: Vec<u8>,
    pos: usize,
}

impl Reader {
    /// Opens `path` and checks the magic and version header.
    pub fn open(path: &Path, magic: &[u8; 8], version: u32) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Self {
            path: path.to_path_buf(),
            bytes,
            pos: 0,
        };
        if r.bytes.len() < 8 || &r.bytes[..8] != magic {
            return Err(Error::BadMagic {
                path: r.path,
                expected: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        r.pos = 8;
        let found = r.u32()?;
        if found != version {
            return Err(Error::VersionMismatch {
                path: r.path,
                found,
                expected: version,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.clone(),
                needed: self.pos.saturating_add(n),
                found: self.bytes.len(),
            }),
        }
    }

    /// Fails with `Truncated` unless at least `n` more bytes are present.
    pub fn require(&self, n: usize) -> Result<()> {
        let needed = self.pos.saturating_add(n);
        if needed > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                needed,
                found: self.bytes.len(),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn f32(&mut self) -> Result<f64> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()) as f64)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn inconsistent(&self, detail: impl Into<String>) -> Error {
        Error::HeaderInconsistent {
            path: self.path.clone(),
            detail: detail.into(),
        }
    }

    /// Rejects trailing bytes after the declared payload.
    pub fn finish(self) -> Result<()> {
        let extra = self.bytes.len() - self.pos;
        if extra != 0 {
            return Err(self.inconsistent(format!("{extra} trailing bytes after payload")));
        }
        Ok(())
    }
}
