//! Binary model container shared by the encoder and tagger.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            ASCII, e.g. "LSTMP-ENC"
//! version          u16
//! header_len       u32
//! header           UTF-8 JSON (config, vocabulary, training metadata)
//! tensor_count     u32
//! per tensor:      name_len u32, name, rows u32, cols u32, rows*cols f32
//! crc32            u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub(crate) struct Container {
    pub header: String,
    pub tensors: Vec<(String, Mat)>,
}

pub(crate) fn encode(magic: &[u8], version: u16, header: &str, tensors: &[(&str, &Mat)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&version.to_le_bytes());
    put_bytes(&mut buf, header.as_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        put_bytes(&mut buf, name.as_bytes());
        buf.extend_from_slice(&(m.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(m.cols as u32).to_le_bytes());
        for &x in &m.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

pub(crate) fn decode(
    module: &'static str,
    magic: &[u8],
    supported_version: u16,
    bytes: &[u8],
) -> Result<Container> {
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        return Err(Error::format(module, "bad magic bytes"));
    }
    let after_magic = &bytes[magic.len()..];
    if after_magic.len() < 2 {
        return Err(Error::corruption(module, "file truncated before version"));
    }
    let version = u16::from_le_bytes([after_magic[0], after_magic[1]]);
    if version == 0 || version > supported_version {
        return Err(Error::format(
            module,
            format!("unsupported format version {version} (this build reads up to {supported_version})"),
        ));
    }
    if bytes.len() < magic.len() + 2 + 4 {
        return Err(Error::corruption(module, "file truncated before checksum"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::corruption(module, "checksum mismatch"));
    }

    let mut cur = Cursor { module, buf: &body[magic.len() + 2..] };
    let header = String::from_utf8(cur.bytes()?.to_vec())
        .map_err(|_| Error::corruption(module, "header is not UTF-8"))?;
    let count = cur.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name = String::from_utf8(cur.bytes()?.to_vec())
            .map_err(|_| Error::corruption(module, "tensor name is not UTF-8"))?;
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let raw = cur.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or_else(
            || Error::corruption(module, "tensor shape overflows"),
        )?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push((name, Mat { rows, cols, data }));
    }
    if !cur.buf.is_empty() {
        return Err(Error::corruption(module, "trailing bytes after tensors"));
    }
    Ok(Container { header, tensors })
}

struct Cursor<'a> {
    module: &'static str,
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::corruption(self.module, "unexpected end of file"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

impl Container {
    /// Removes and returns the tensor called `name`, checking its shape.
    pub fn tensor(&mut self, module: &'static str, name: &str, rows: usize, cols: usize) -> Result<Mat> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::format(module, format!("missing tensor `{name}`")))?;
        let (_, m) = self.tensors.swap_remove(pos);
        if m.rows != rows || m.cols != cols {
            return Err(Error::format(
                module,
                format!("tensor `{name}` has shape {}x{}, expected {rows}x{cols}", m.rows, m.cols),
            ));
        }
        Ok(m)
    }
}

pub(crate) fn write_file(module: &'static str, path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(module, e))
}

pub(crate) fn read_file(module: &'static str, path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(module, e))
}
