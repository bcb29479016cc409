//! Little-endian cursor shared by the binary containers.

use crate::error::FormatError;

pub struct Reader<'a> {
    what: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(what: &'static str, buf: &'a [u8]) -> Self {
        Self { what, buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if n > self.remaining() {
            return Err(FormatError::Truncated {
                what: self.what,
                offset: self.buf.len(),
                missing: n - self.remaining(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("slice of length N"))
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    /// Checks the magic and version prefix.
    pub fn header(&mut self, magic: &[u8; 8], version: u16) -> Result<(), FormatError> {
        let n = 8.min(self.remaining());
        if self.take(n)? != &magic[..n] {
            return Err(FormatError::BadMagic { what: self.what });
        }
        if n < 8 {
            return Err(FormatError::Truncated {
                what: self.what,
                offset: n,
                missing: 8 - n,
            });
        }
        let at = self.pos;
        let found = self.u16()?;
        if found != version {
            return Err(FormatError::UnsupportedVersion {
                what: self.what,
                offset: at,
                found,
                supported: version,
            });
        }
        Ok(())
    }

    /// Byte count of `count` items of `size` bytes, checked against the
    /// remaining input before anything is allocated.
    pub fn payload_len(&self, count: u64, size: usize) -> Result<usize, FormatError> {
        let n = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(size))
            .ok_or_else(|| self.invalid(format!("payload of {count} items overflows")))?;
        if n > self.remaining() {
            return Err(FormatError::Truncated {
                what: self.what,
                offset: self.buf.len(),
                missing: n - self.remaining(),
            });
        }
        Ok(n)
    }

    pub fn invalid(&self, reason: impl Into<String>) -> FormatError {
        FormatError::Invalid {
            what: self.what,
            offset: self.pos,
            reason: reason.into(),
        }
    }

    pub fn finish(self) -> Result<(), FormatError> {
        if self.remaining() > 0 {
            return Err(FormatError::TrailingBytes {
                what: self.what,
                offset: self.pos,
                extra: self.remaining(),
            });
        }
        Ok(())
    }
}
