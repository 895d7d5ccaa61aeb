//! MSB-first bit packing.

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bytes: usize) -> Self {
        BitWriter {
            bytes: Vec::with_capacity(bytes),
            ..Self::default()
        }
    }

    /// Appends the low `count` bits of `value`, most significant first.
    #[inline]
    pub fn write(&mut self, value: u64, count: u32) {
        debug_assert!(count <= 64);
        if count == 0 {
            return;
        }
        if count > 32 {
            self.write(value >> 32, count - 32);
            self.write(value & 0xffff_ffff, 32);
            return;
        }
        let value = value & ((1u64 << count) - 1);
        self.acc = (self.acc << count) | value;
        self.filled += count;
        while self.filled >= 8 {
            self.filled -= 8;
            self.bytes.push((self.acc >> self.filled) as u8);
        }
        self.acc &= (1u64 << self.filled) - 1;
    }

    #[inline]
    pub fn write_bit(&mut self, bit: bool) {
        self.write(bit as u64, 1);
    }

    /// Pads the final byte with zeros.
    pub fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push((self.acc << (8 - self.filled)) as u8);
        }
        self.bytes
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    #[inline]
    pub fn read_bit(&mut self) -> Result<bool> {
        let byte = self
            .bytes
            .get(self.pos >> 3)
            .ok_or_else(|| Error::corrupted("bitstream ended early"))?;
        let bit = (byte >> (7 - (self.pos & 7))) & 1;
        self.pos += 1;
        Ok(bit == 1)
    }

    /// Reads `count` bits, most significant first.
    pub fn read(&mut self, count: u32) -> Result<u64> {
        debug_assert!(count <= 64);
        if count == 0 {
            return Ok(0);
        }
        if count > 56 {
            let hi = self.read(count - 32)?;
            return Ok((hi << 32) | self.read(32)?);
        }
        let end = self.pos + count as usize;
        if end > self.bytes.len() * 8 {
            return Err(Error::corrupted("bitstream ended early"));
        }
        let first = self.pos >> 3;
        let mut window = [0u8; 8];
        let avail = (self.bytes.len() - first).min(8);
        window[..avail].copy_from_slice(&self.bytes[first..first + avail]);
        let word = u64::from_be_bytes(window) << (self.pos & 7);
        self.pos = end;
        Ok(word >> (64 - count))
    }

    pub fn bits_consumed(&self) -> usize {
        self.pos
    }
}

/// Little-endian cursor over a byte slice with truncation checks.
pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::corrupted(format!(
                    "needed {n} bytes at offset {}, only {} remain",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::corrupted(format!(
                "{} trailing bytes",
                self.remaining()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_msb_first() {
        let mut w = BitWriter::new();
        w.write(0b101, 3);
        w.write(0b1, 1);
        w.write(0xff, 8);
        let bytes = w.finish();
        assert_eq!(bytes, vec![0b1011_1111, 0b1111_0000]);
        let mut r = BitReader::new(&bytes);
        assert_eq!(r.read(3).unwrap(), 0b101);
        assert_eq!(r.read(1).unwrap(), 1);
        assert_eq!(r.read(8).unwrap(), 0xff);
    }

    #[test]
    fn wide_writes_round_trip() {
        let mut w = BitWriter::new();
        w.write(u64::MAX - 5, 64);
        w.write(0x1_2345_6789, 33);
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        assert_eq!(r.read(64).unwrap(), u64::MAX - 5);
        assert_eq!(r.read(33).unwrap(), 0x1_2345_6789);
    }

    #[test]
    fn reader_detects_exhaustion() {
        let mut r = BitReader::new(&[0xAA]);
        assert!(r.read(8).is_ok());
        assert!(r.read_bit().is_err());
        let mut b = ByteReader::new(&[1, 2, 3]);
        assert!(b.u32().is_err());
    }
}
