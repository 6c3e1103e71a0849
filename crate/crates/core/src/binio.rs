//! Little-endian primitive readers/writers shared by the binary file formats.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{MapError, Result};

pub(crate) struct ByteWriter<W: Write> {
    inner: W,
}

impl<W: Write> ByteWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn i64(&mut self, v: i64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

pub(crate) struct ByteReader<'p, R: Read> {
    inner: R,
    offset: u64,
    path: &'p Path,
}

impl<'p, R: Read> ByteReader<'p, R> {
    pub fn new(inner: R, path: &'p Path) -> Self {
        Self { inner, offset: 0, path }
    }

    fn path(&self) -> PathBuf {
        self.path.to_path_buf()
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                MapError::format(self.path(), format!("unexpected end of file at byte {}", self.offset))
            } else {
                MapError::io(self.path(), e)
            }
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        // avoid trusting a corrupt length for the up-front allocation
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(MapError::format(self.path(), format!("trailing bytes after offset {}", self.offset))),
            Err(e) => Err(MapError::io(self.path(), e)),
        }
    }
}
