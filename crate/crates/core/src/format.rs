//! Binary container shared by dataset and checkpoint files.
//!
//! Layout: 8-byte magic, `u64` little-endian header length, UTF-8 JSON header,
//! little-endian payload, `u32` CRC-32 trailer. All integers are little-endian
//! and nothing is padded.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("inconsistent contents: {0}")]
    Inconsistent(String),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

/// Which bytes the CRC trailer covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrcScope {
    Payload,
    HeaderAndPayload,
}

/// Append-only little-endian payload builder.
#[derive(Default)]
pub struct PayloadWriter {
    bytes: Vec<u8>,
}

impl PayloadWriter {
    pub fn with_capacity(bytes: usize) -> Self {
        PayloadWriter {
            bytes: Vec::with_capacity(bytes),
        }
    }

    pub fn put_u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_bytes(&mut self, v: &[u8]) {
        self.bytes.extend_from_slice(v);
    }

    pub fn put_f64s(&mut self, values: &[f64]) {
        self.bytes.reserve(values.len() * 8);
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Cursor over a payload produced by [`PayloadWriter`].
pub struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        PayloadReader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(FormatError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        self.take(n, what)
    }

    pub fn f64s(&mut self, count: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let n = count.checked_mul(8).ok_or(FormatError::Truncated(what))?;
        let raw = self.take(n, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(self) -> Result<(), FormatError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

pub fn encode(magic: &[u8; 8], header: &[u8], payload: &[u8], scope: CrcScope) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 + header.len() + payload.len() + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    let crc = match scope {
        CrcScope::Payload => crc32fast::hash(payload),
        CrcScope::HeaderAndPayload => crc32fast::hash(&out[16..]),
    };
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Splits a container into `(header, payload)` after checking magic and CRC.
pub fn decode<'a>(bytes: &'a [u8], magic: &[u8; 8], scope: CrcScope) -> Result<(&'a [u8], &'a [u8]), FormatError> {
    let found = bytes.get(..8).ok_or(FormatError::Truncated("magic"))?;
    if found != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let mut reader = PayloadReader::new(&bytes[8..]);
    let header_len = reader.u64("header length")?;
    let header_len = usize::try_from(header_len).map_err(|_| FormatError::Truncated("header"))?;
    let header = reader.bytes(header_len, "header")?;
    let body_start = 16 + header_len;
    if bytes.len() < body_start + 4 {
        return Err(FormatError::Truncated("checksum"));
    }
    let crc_at = bytes.len() - 4;
    let payload = &bytes[body_start..crc_at];
    let stored = u32::from_le_bytes(bytes[crc_at..].try_into().unwrap());
    let computed = match scope {
        CrcScope::Payload => crc32fast::hash(payload),
        CrcScope::HeaderAndPayload => crc32fast::hash(&bytes[16..crc_at]),
    };
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok((header, payload))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| FormatError::Header(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
