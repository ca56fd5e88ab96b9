//! Little-endian binary helpers shared by the on-disk formats, and the
//! access log used to audit which files and routes a process touched.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Access {
    File(PathBuf),
    Route(String),
}

/// Shared, append-only record of file reads and service routes.
#[derive(Clone, Debug, Default)]
pub struct AccessLog(Arc<Mutex<Vec<Access>>>);

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, a: Access) {
        self.0.lock().expect("access log poisoned").push(a);
    }

    pub fn entries(&self) -> Vec<Access> {
        self.0.lock().expect("access log poisoned").clone()
    }

    pub fn files(&self) -> Vec<PathBuf> {
        self.entries()
            .into_iter()
            .filter_map(|a| match a {
                Access::File(p) => Some(p),
                Access::Route(_) => None,
            })
            .collect()
    }

    pub fn routes(&self) -> Vec<String> {
        self.entries()
            .into_iter()
            .filter_map(|a| match a {
                Access::Route(r) => Some(r),
                Access::File(_) => None,
            })
            .collect()
    }
}

/// Reads a whole file, recording the access when a log is attached.
pub fn read_file(path: &Path, log: Option<&AccessLog>) -> Result<Vec<u8>> {
    if let Some(log) = log {
        log.record(Access::File(path.to_path_buf()));
    }
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], path: &Path) -> Self {
        Self {
            buf,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.bytes(4, "magic")?;
        if got != want {
            self.pos -= 4;
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn usize(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.bytes(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.bytes(n.checked_mul(8).ok_or_else(|| self.fail("length overflow"))?, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.bytes(n.checked_mul(4).ok_or_else(|| self.fail("length overflow"))?, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    /// `u32` length followed by UTF-8 bytes.
    pub fn string(&mut self, what: &str) -> Result<String> {
        let n = self.usize(what)?;
        let start = self.pos;
        let b = self.bytes(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format {
            path: self.path.clone(),
            offset: start as u64,
            msg: format!("{what} is not UTF-8"),
        })
    }

    pub fn version(&mut self, supported: u32) -> Result<u32> {
        let at = self.pos;
        let v = self.u32("version")?;
        if v != supported {
            self.pos = at;
            return Err(self.fail(format!("unsupported version {v} (expected {supported})")));
        }
        Ok(v)
    }
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raw(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn u32(&mut self, x: u32) -> &mut Self {
        self.raw(&x.to_le_bytes())
    }

    pub fn usize(&mut self, x: usize) -> &mut Self {
        self.u32(u32::try_from(x).expect("value fits in u32"))
    }

    pub fn f32(&mut self, x: f32) -> &mut Self {
        self.raw(&x.to_le_bytes())
    }

    pub fn f64s(&mut self, xs: &[f64]) -> &mut Self {
        for x in xs {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
        self
    }

    pub fn f32s(&mut self, xs: &[f32]) -> &mut Self {
        for &x in xs {
            self.f32(x);
        }
        self
    }

    pub fn string(&mut self, s: &str) -> &mut Self {
        self.usize(s.len()).raw(s.as_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}
