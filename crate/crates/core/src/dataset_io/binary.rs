//! Raw little-endian array files.
//!
//! Layout: 8-byte magic, `u32` rank, `rank × u32` dims, then the payload as
//! little-endian `f32` or `i32` in row-major order. Embedding tables use their
//! own magic followed by `u32` count, `u32` dim and `count` records of
//! `(i32 label, dim × f32)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC_F32: &[u8; 8] = b"SSLF32\0\x01";
pub const MAGIC_I32: &[u8; 8] = b"SSLI32\0\x01";
pub const MAGIC_EMB: &[u8; 8] = b"SSLEMB\0\x01";

/// Little-endian cursor over a byte buffer that reports truncation as a
/// [`Error::Format`].
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'a str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "{}: truncated (needed {} bytes at offset {}, have {})",
                self.what,
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.overflow())?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.overflow())?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn i32_vec(&mut self, n: usize) -> Result<Vec<i32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.overflow())?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Format(format!("{}: invalid UTF-8 string", self.what)))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }

    fn overflow(&self) -> Error {
        Error::Format(format!("{}: size overflow", self.what))
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    pub(crate) buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn f32_slice(&mut self, v: &[f32]) {
        for x in v {
            self.f32(*x);
        }
    }
    pub(crate) fn f64_slice(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
    pub(crate) fn i32_slice(&mut self, v: &[i32]) {
        for x in v {
            self.i32(*x);
        }
    }
    pub(crate) fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_header(r: &mut Reader<'_>, magic: &[u8; 8]) -> Result<Vec<usize>> {
    let m = r.take(8)?;
    if m != magic {
        return Err(Error::Format(format!("{}: bad magic bytes", r.what)));
    }
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("{}: invalid rank {}", r.what, rank)));
    }
    (0..rank).map(|_| Ok(r.u32()? as usize)).collect()
}

fn write_header(w: &mut Writer, magic: &[u8; 8], dims: &[usize]) {
    w.bytes(magic);
    w.u32(dims.len() as u32);
    for d in dims {
        w.u32(*d as u32);
    }
}

/// Encodes an `f32` array with the given dims.
pub fn encode_f32(dims: &[usize], data: &[f32]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut w = Writer::default();
    write_header(&mut w, MAGIC_F32, dims);
    w.f32_slice(data);
    w.buf
}

pub fn decode_f32(bytes: &[u8], what: &str) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut r = Reader::new(bytes, what);
    let dims = read_header(&mut r, MAGIC_F32)?;
    let data = r.f32_vec(dims.iter().product())?;
    r.finish()?;
    Ok((dims, data))
}

pub fn encode_i32(dims: &[usize], data: &[i32]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut w = Writer::default();
    write_header(&mut w, MAGIC_I32, dims);
    w.i32_slice(data);
    w.buf
}

pub fn decode_i32(bytes: &[u8], what: &str) -> Result<(Vec<usize>, Vec<i32>)> {
    let mut r = Reader::new(bytes, what);
    let dims = read_header(&mut r, MAGIC_I32)?;
    let data = r.i32_vec(dims.iter().product())?;
    r.finish()?;
    Ok((dims, data))
}

/// Encodes `(label, embedding)` rows; every embedding must have length `dim`.
pub fn encode_embeddings(dim: usize, rows: &[(i32, Vec<f64>)]) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC_EMB);
    w.u32(rows.len() as u32);
    w.u32(dim as u32);
    for (label, e) in rows {
        debug_assert_eq!(e.len(), dim);
        w.i32(*label);
        for x in e {
            w.f32(*x as f32);
        }
    }
    w.buf
}

/// Decodes an embedding table, returning the stored dim and rows.
pub fn decode_embeddings(bytes: &[u8], what: &str) -> Result<(usize, Vec<(i32, Vec<f64>)>)> {
    let mut r = Reader::new(bytes, what);
    if r.take(8)? != MAGIC_EMB {
        return Err(Error::Format(format!("{what}: bad magic bytes")));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut rows = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let label = r.i32()?;
        let e = r.f32_vec(dim)?.into_iter().map(f64::from).collect();
        rows.push((label, e));
    }
    r.finish()?;
    Ok((dim, rows))
}
