//! Canonical byte encoding for every value that is MAC'd or sent on a wire.
//!
//! The format is deterministic and self-delimiting:
//! * integers are fixed-width big-endian (`u32`, `u64`, `i32` two's complement)
//! * booleans are a single byte, `0x00` or `0x01`
//! * byte strings and UTF-8 strings carry a `u32` big-endian length prefix
//! * sequences carry a `u32` big-endian element-count prefix
//!
//! Authentication tags are computed over these bytes, so the layout is frozen
//! by golden files under `tests/golden/`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    /// A length or element count does not fit the 32-bit prefix.
    #[error("encoding overflow: length {0} exceeds the 32-bit length prefix")]
    EncodingOverflow(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("input ended at byte {offset}: needed {needed} more byte(s)")]
    UnexpectedEnd { offset: usize, needed: usize },
    #[error("{0} trailing byte(s) after a complete value")]
    TrailingBytes(usize),
    #[error("invalid boolean byte {0:#04x}")]
    InvalidBool(u8),
    #[error("string field is not valid UTF-8")]
    InvalidUtf8,
    #[error("malformed value: {0}")]
    Invalid(&'static str),
}

/// Accumulates the canonical encoding of one value.
#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self { buf: Vec::with_capacity(cap) }
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_bool(&mut self, v: bool) {
        self.buf.push(v as u8);
    }

    pub fn put_bytes(&mut self, v: &[u8]) -> Result<(), EncodeError> {
        let len = u32::try_from(v.len()).map_err(|_| EncodeError::EncodingOverflow(v.len()))?;
        self.put_u32(len);
        self.buf.extend_from_slice(v);
        Ok(())
    }

    pub fn put_str(&mut self, v: &str) -> Result<(), EncodeError> {
        self.put_bytes(v.as_bytes())
    }

    /// Count prefix for a sequence; elements follow via their own `encode_into`.
    pub fn put_count(&mut self, n: usize) -> Result<(), EncodeError> {
        let n = u32::try_from(n).map_err(|_| EncodeError::EncodingOverflow(n))?;
        self.put_u32(n);
        Ok(())
    }

    pub fn put_seq<T: Encode>(&mut self, items: &[T]) -> Result<(), EncodeError> {
        self.put_count(items.len())?;
        for item in items {
            item.encode_into(self)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a canonical encoding; every read checks the remaining input.
pub struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.input.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::UnexpectedEnd {
                offset: self.pos,
                needed: n - self.remaining(),
            });
        }
        let out = &self.input[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn get_u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_i32(&mut self) -> Result<i32, DecodeError> {
        Ok(i32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_bool(&mut self) -> Result<bool, DecodeError> {
        match self.get_u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(DecodeError::InvalidBool(b)),
        }
    }

    pub fn get_bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let len = self.get_u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    pub fn get_str(&mut self) -> Result<String, DecodeError> {
        let bytes = self.get_bytes()?;
        String::from_utf8(bytes).map_err(|_| DecodeError::InvalidUtf8)
    }

    pub fn get_count(&mut self) -> Result<usize, DecodeError> {
        Ok(self.get_u32()? as usize)
    }

    pub fn get_seq<T: Decode>(&mut self) -> Result<Vec<T>, DecodeError> {
        let n = self.get_count()?;
        // Each element occupies at least one byte; reject counts the input cannot hold.
        let mut out = Vec::with_capacity(n.min(self.remaining()));
        for _ in 0..n {
            out.push(T::decode_from(self)?);
        }
        Ok(out)
    }

    /// Fails unless the whole input was consumed.
    pub fn finish(self) -> Result<(), DecodeError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(DecodeError::TrailingBytes(self.remaining()))
        }
    }
}

pub trait Encode {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError>;

    fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc)?;
        Ok(enc.finish())
    }
}

pub trait Decode: Sized {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    /// Decodes one value and requires the input to be exactly consumed.
    fn decode(input: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(input);
        let value = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(value)
    }
}

impl Encode for u8 {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_u8(*self);
        Ok(())
    }
}

impl Decode for u8 {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.get_u8()
    }
}

impl Encode for String {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_str(self)
    }
}

impl Decode for String {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.get_str()
    }
}
