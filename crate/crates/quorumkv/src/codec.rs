//! Canonical binary encoding primitives.
//!
//! Every on-disk record and wire message in this crate is built from the same
//! vocabulary: fixed-width little-endian integers and length-prefixed byte
//! strings. There is exactly one encoding for a given value, which lets tests
//! pin formats with golden files and lets the replicated log compare values
//! byte for byte.

use thiserror::Error;

/// Decoding failure. Carries a short context string naming what was being read.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed encoding: {0}")]
pub struct Malformed(pub &'static str);

pub type DecodeResult<T> = Result<T, Malformed>;

/// Append-only encoder over a byte vector.
#[derive(Default)]
pub struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    pub fn new() -> Self {
        Enc { buf: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Enc { buf: Vec::with_capacity(n) }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    /// Length-prefixed byte string (u32 length, then the bytes).
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    /// Raw bytes with no length prefix (caller provides framing).
    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor-based decoder over a byte slice.
pub struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Dec { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> DecodeResult<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Malformed(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &'static str) -> DecodeResult<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &'static str) -> DecodeResult<u32> {
        let s = self.take(4, what)?;
        Ok(u32::from_le_bytes(s.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &'static str) -> DecodeResult<u64> {
        let s = self.take(8, what)?;
        Ok(u64::from_le_bytes(s.try_into().unwrap()))
    }

    pub fn i64(&mut self, what: &'static str) -> DecodeResult<i64> {
        let s = self.take(8, what)?;
        Ok(i64::from_le_bytes(s.try_into().unwrap()))
    }

    pub fn bool(&mut self, what: &'static str) -> DecodeResult<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Malformed(what)),
        }
    }

    pub fn bytes(&mut self, what: &'static str) -> DecodeResult<&'a [u8]> {
        let len = self.u32(what)? as usize;
        self.take(len, what)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Succeeds only if the whole input has been consumed. Trailing garbage
    /// would mean two encodings decode to the same value, so it is rejected.
    pub fn finish(&self, what: &'static str) -> DecodeResult<()> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(Malformed(what))
        }
    }
}

/// 64-bit FNV-1a hash, used for event-log digests and value fingerprints.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// CRC-32 (IEEE, reflected) used to frame write-ahead-log records.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = !0;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb88320 & mask);
        }
    }
    !crc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_primitives() {
        let mut e = Enc::new();
        e.u8(7).u32(0xdead_beef).u64(u64::MAX).i64(-42).bool(true).bytes(b"abc");
        let v = e.into_vec();
        let mut d = Dec::new(&v);
        assert_eq!(d.u8("a").unwrap(), 7);
        assert_eq!(d.u32("b").unwrap(), 0xdead_beef);
        assert_eq!(d.u64("c").unwrap(), u64::MAX);
        assert_eq!(d.i64("d").unwrap(), -42);
        assert!(d.bool("e").unwrap());
        assert_eq!(d.bytes("f").unwrap(), b"abc");
        d.finish("g").unwrap();
    }

    #[test]
    fn truncation_is_malformed() {
        let mut e = Enc::new();
        e.bytes(b"hello");
        let v = e.into_vec();
        for cut in 0..v.len() {
            let mut d = Dec::new(&v[..cut]);
            assert!(d.bytes("x").is_err());
        }
    }

    #[test]
    fn crc32_known_vector() {
        // Standard check value for the IEEE polynomial.
        assert_eq!(crc32(b"123456789"), 0xcbf43926);
    }

    #[test]
    fn fnv1a_known_vector() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
