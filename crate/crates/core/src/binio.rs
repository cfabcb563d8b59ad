//! Little-endian helpers for the binary file formats (speaker database,
//! embedding store, topic model). Reads track the absolute byte offset so
//! format errors can point at the exact position that failed.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("format error at byte {offset}: {message}")]
    Invalid { offset: u64, message: String },
    #[error("truncated input at byte {offset}: expected {expected} more bytes")]
    Truncated { offset: u64, expected: usize },
    #[error("i/o error at byte {offset}: {source}")]
    Io { offset: u64, source: io::Error },
}

impl FormatError {
    pub fn offset(&self) -> u64 {
        match self {
            FormatError::Invalid { offset, .. }
            | FormatError::Truncated { offset, .. }
            | FormatError::Io { offset, .. } => *offset,
        }
    }
}

pub struct ByteReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn invalid(&self, at: u64, message: impl Into<String>) -> FormatError {
        FormatError::Invalid {
            offset: at,
            message: message.into(),
        }
    }

    pub fn read_bytes(&mut self, buf: &mut [u8]) -> Result<(), FormatError> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(FormatError::Truncated {
                        offset: self.offset + filled as u64,
                        expected: buf.len() - filled,
                    })
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(source) => {
                    return Err(FormatError::Io {
                        offset: self.offset + filled as u64,
                        source,
                    })
                }
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<(), FormatError> {
        let start = self.offset;
        let mut buf = vec![0u8; magic.len()];
        self.read_bytes(&mut buf)?;
        if buf != magic {
            return Err(self.invalid(start, format!("bad magic {:?}", String::from_utf8_lossy(&buf))));
        }
        Ok(())
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        let mut b = [0u8; 2];
        self.read_bytes(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        let mut b = [0u8; 4];
        self.read_bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        let mut b = [0u8; 8];
        self.read_bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        let mut b = [0u8; 4];
        self.read_bytes(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        let mut b = [0u8; 8];
        self.read_bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    /// Reads `n` little-endian f32 values into `out`.
    pub fn f32_into(&mut self, n: usize, out: &mut Vec<f32>) -> Result<(), FormatError> {
        let mut buf = vec![0u8; n * 4];
        self.read_bytes(&mut buf)?;
        out.extend(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        Ok(())
    }

    /// u32 length prefix followed by that many UTF-8 bytes.
    pub fn string(&mut self) -> Result<String, FormatError> {
        let start = self.offset;
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.read_bytes(&mut buf)?;
        String::from_utf8(buf).map_err(|_| self.invalid(start, "string is not valid UTF-8"))
    }

    /// Fails unless the input is exhausted.
    pub fn expect_eof(&mut self) -> Result<(), FormatError> {
        let mut b = [0u8; 1];
        loop {
            return match self.inner.read(&mut b) {
                Ok(0) => Ok(()),
                Ok(_) => Err(self.invalid(self.offset, "trailing bytes after end of data")),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(source) => Err(FormatError::Io {
                    offset: self.offset,
                    source,
                }),
            };
        }
    }
}

pub fn write_u16<W: Write>(w: &mut W, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f32_slice<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn write_string<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    let len = u32::try_from(s.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "string longer than u32::MAX"))?;
    write_u32(w, len)?;
    w.write_all(s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_reports_offset() {
        let data = [1u8, 0, 0];
        let mut r = ByteReader::new(&data[..]);
        let err = r.u32().unwrap_err();
        assert!(matches!(err, FormatError::Truncated { offset: 3, expected: 1 }));
    }

    #[test]
    fn bad_magic_at_zero() {
        let mut r = ByteReader::new(&b"NOPE1234"[..]);
        let err = r.expect_magic(b"SPKDB1\0\0").unwrap_err();
        assert_eq!(err.offset(), 0);
    }

    #[test]
    fn string_roundtrip_and_eof() {
        let mut buf = Vec::new();
        write_string(&mut buf, "spk-é").unwrap();
        let mut r = ByteReader::new(&buf[..]);
        assert_eq!(r.string().unwrap(), "spk-é");
        r.expect_eof().unwrap();
    }
}
