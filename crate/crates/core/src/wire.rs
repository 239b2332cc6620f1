//! Uplink payload format.
//!
//! ```text
//! offset  size  field
//!      0     2  node_id         u16 LE
//!      2     2  round           u16 LE
//!      4     4  probe_count m   u32 LE
//!      8     4  vocab V         u32 LE
//!     12     1  bits_per_coord  u8
//!     13     8  clip            f64 LE
//!     21     8  dither_seed     u64 LE
//!     29     .  body
//! ```
//!
//! The body holds the `m * V` indices probe-major, each `bits_per_coord` wide
//! and written MSB-first, zero-padded to a byte boundary only at the end.
//! Capture files are a plain concatenation of payloads, each preceded by its
//! length as a u32 LE.

use std::io::{self, Read, Write};

use crate::error::{FpldError, Result};
use crate::quant::MAX_BITS_PER_COORD;

pub const HEADER_LEN: usize = 29;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadHeader {
    pub node_id: u16,
    pub round: u16,
    pub probe_count: u32,
    pub vocab: u32,
    pub bits_per_coord: u8,
    pub clip: f64,
    pub dither_seed: u64,
}

impl PayloadHeader {
    /// Number of body bits, `m * V * bits_per_coord`.
    pub fn body_bits(&self) -> u64 {
        self.probe_count as u64 * self.vocab as u64 * self.bits_per_coord as u64
    }

    pub fn body_len(&self) -> usize {
        self.body_bits().div_ceil(8) as usize
    }

    pub fn index_count(&self) -> usize {
        self.probe_count as usize * self.vocab as usize
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.node_id.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.probe_count.to_le_bytes());
        out.extend_from_slice(&self.vocab.to_le_bytes());
        out.push(self.bits_per_coord);
        out.extend_from_slice(&self.clip.to_le_bytes());
        out.extend_from_slice(&self.dither_seed.to_le_bytes());
    }

    fn read_from(b: &[u8; HEADER_LEN]) -> Self {
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        Self {
            node_id: u16_at(0),
            round: u16_at(2),
            probe_count: u32_at(4),
            vocab: u32_at(8),
            bits_per_coord: b[12],
            clip: f64::from_bits(u64_at(13)),
            dither_seed: u64_at(21),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedPayload {
    pub header: PayloadHeader,
    /// `m * V` indices, probe-major.
    pub indices: Vec<u32>,
}

impl QuantizedPayload {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        pack(&self.header, &self.indices)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, indices) = unpack(bytes)?;
        Ok(Self { header, indices })
    }

    pub fn probe(&self, l: usize) -> &[u32] {
        let v = self.header.vocab as usize;
        &self.indices[l * v..(l + 1) * v]
    }
}

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        Self { out, acc: 0, filled: 0 }
    }

    #[inline]
    fn put(&mut self, value: u32, width: u32) {
        // width <= 32 and filled < 8 on entry, so acc never exceeds 40 bits
        self.acc = (self.acc << width) | value as u64;
        self.filled += width;
        while self.filled >= 8 {
            self.filled -= 8;
            self.out.push((self.acc >> self.filled) as u8);
        }
        self.acc &= (1u64 << self.filled) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.out.push((self.acc << (8 - self.filled)) as u8);
        }
        self.out
    }
}

/// Serialize one payload.
pub fn pack(header: &PayloadHeader, indices: &[u32]) -> Result<Vec<u8>> {
    let bits = header.bits_per_coord as u32;
    if bits > MAX_BITS_PER_COORD as u32 {
        return Err(FpldError::Encoding(format!("bits_per_coord {bits} exceeds {MAX_BITS_PER_COORD}")));
    }
    if indices.len() != header.index_count() {
        return Err(FpldError::Encoding(format!(
            "expected m*V = {} indices, got {}",
            header.index_count(),
            indices.len()
        )));
    }
    let limit = 1u64 << bits;
    if let Some((pos, &bad)) = indices.iter().enumerate().find(|(_, &i)| i as u64 >= limit) {
        return Err(FpldError::Encoding(format!("index {bad} at position {pos} does not fit in {bits} bits")));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + header.body_len());
    header.write_to(&mut out);
    if bits == 0 {
        return Ok(out);
    }
    let mut w = BitWriter::new(out);
    for &i in indices {
        w.put(i, bits);
    }
    let out = w.finish();
    debug_assert_eq!(out.len(), HEADER_LEN + header.body_len());
    Ok(out)
}

/// Parse one payload, rejecting anything that `pack` could not have produced.
pub fn unpack(bytes: &[u8]) -> Result<(PayloadHeader, Vec<u32>)> {
    let head: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| FpldError::Protocol(format!("truncated header: {} bytes", bytes.len())))?;
    let header = PayloadHeader::read_from(head);
    if header.bits_per_coord > MAX_BITS_PER_COORD {
        return Err(FpldError::Protocol(format!(
            "bits_per_coord {} exceeds {MAX_BITS_PER_COORD}",
            header.bits_per_coord
        )));
    }
    if !(header.clip > 0.0 && header.clip.is_finite()) {
        return Err(FpldError::Protocol(format!("invalid clip {}", header.clip)));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != header.body_len() {
        return Err(FpldError::Protocol(format!(
            "body is {} bytes but m={} V={} bits={} needs {}",
            body.len(),
            header.probe_count,
            header.vocab,
            header.bits_per_coord,
            header.body_len()
        )));
    }
    let pad = (8 * body.len() as u64 - header.body_bits()) as u32;
    if pad > 0 {
        let last = body[body.len() - 1];
        if last & ((1u8 << pad) - 1) != 0 {
            return Err(FpldError::Protocol("nonzero padding bits".into()));
        }
    }
    let n = header.index_count();
    let bits = header.bits_per_coord as u32;
    if bits == 0 {
        return Ok((header, vec![0; n]));
    }
    let mut indices = Vec::with_capacity(n);
    let mut acc = 0u64;
    let mut have = 0u32;
    let mut bytes_iter = body.iter();
    let mask = (1u64 << bits) - 1;
    for _ in 0..n {
        while have < bits {
            // length was checked above, so the body cannot run out here
            acc = (acc << 8) | *bytes_iter.next().unwrap() as u64;
            have += 8;
        }
        have -= bits;
        indices.push(((acc >> have) & mask) as u32);
        acc &= (1u64 << have) - 1;
    }
    Ok((header, indices))
}

pub fn write_capture<W: Write>(mut w: W, payloads: &[Vec<u8>]) -> io::Result<()> {
    for p in payloads {
        let len =
            u32::try_from(p.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "payload over 4 GiB"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(p)?;
    }
    w.flush()
}

pub fn read_capture<R: Read>(mut r: R) -> io::Result<Vec<Vec<u8>>> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    let mut out = Vec::new();
    let mut rest = all.as_slice();
    while !rest.is_empty() {
        if rest.len() < 4 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated length prefix"));
        }
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        rest = &rest[4..];
        if rest.len() < len {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated payload"));
        }
        out.push(rest[..len].to_vec());
        rest = &rest[len..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(m: u32, v: u32, bits: u8) -> PayloadHeader {
        PayloadHeader {
            node_id: 3,
            round: 1,
            probe_count: m,
            vocab: v,
            bits_per_coord: bits,
            clip: 1.0,
            dither_seed: 0xdead_beef,
        }
    }

    #[test]
    fn alternating_bits_pack_to_0xaa() {
        let bytes = pack(&header(1, 8, 1), &[1, 0, 1, 0, 1, 0, 1, 0]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 1);
        assert_eq!(bytes[HEADER_LEN], 0xAA);
    }

    #[test]
    fn zero_bits_has_empty_body() {
        let bytes = pack(&header(1, 1, 0), &[0]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(unpack(&bytes).unwrap().1, vec![0]);
    }

    #[test]
    fn body_length_rounds_up() {
        let bytes = pack(&header(2, 3, 3), &[7, 0, 5, 1, 2, 3]).unwrap();
        assert_eq!(bytes.len() - HEADER_LEN, 3);
        // 111 000 101 001 010 011 + 000000 padding
        assert_eq!(&bytes[HEADER_LEN..], &[0b1110_0010, 0b1001_0100, 0b1100_0000]);
    }

    #[test]
    fn header_layout_is_little_endian() {
        let h = PayloadHeader {
            node_id: 0x0102,
            round: 0x0304,
            probe_count: 0x0506_0708,
            vocab: 0,
            bits_per_coord: 9,
            clip: 2.5,
            dither_seed: 0x1122_3344_5566_7788,
        };
        let b = pack(&h, &[]).unwrap();
        assert_eq!(&b[..4], &[0x02, 0x01, 0x04, 0x03]);
        assert_eq!(&b[4..8], &[0x08, 0x07, 0x06, 0x05]);
        assert_eq!(b[12], 9);
        assert_eq!(&b[13..21], &2.5f64.to_le_bytes());
        assert_eq!(b[21], 0x88);
        assert_eq!(unpack(&b).unwrap().0, h);
    }

    #[test]
    fn overflowing_index_is_rejected() {
        assert!(matches!(pack(&header(1, 2, 2), &[3, 4]), Err(FpldError::Encoding(_))));
        assert!(matches!(pack(&header(1, 2, 2), &[3]), Err(FpldError::Encoding(_))));
    }

    #[test]
    fn nonzero_padding_is_rejected() {
        let mut b = pack(&header(1, 3, 1), &[1, 1, 1]).unwrap();
        *b.last_mut().unwrap() |= 1;
        assert!(matches!(unpack(&b), Err(FpldError::Protocol(_))));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let b = pack(&header(1, 256, 9), &vec![511; 256]).unwrap();
        assert_eq!(b.len(), HEADER_LEN + 288);
        assert!(unpack(&b).is_ok());
        assert!(unpack(&b[..b.len() - 1]).is_err());
        let mut longer = b.clone();
        longer.push(0);
        assert!(unpack(&longer).is_err());
        assert!(unpack(&b[..HEADER_LEN - 1]).is_err());
    }

    #[test]
    fn single_bit_flip_changes_one_index() {
        let h = header(3, 5, 5);
        let idx: Vec<u32> = (0..15).map(|i| (i * 7) % 32).collect();
        let b = pack(&h, &idx).unwrap();
        for bit in 0..h.body_bits() as usize {
            let mut c = b.clone();
            c[HEADER_LEN + bit / 8] ^= 0x80 >> (bit % 8);
            let (_, got) = unpack(&c).unwrap();
            let changed: Vec<usize> = (0..idx.len()).filter(|&i| got[i] != idx[i]).collect();
            assert_eq!(changed, vec![bit / 5]);
            assert_eq!(got[bit / 5] ^ idx[bit / 5], 1 << (4 - bit % 5));
        }
    }

    #[test]
    fn capture_round_trip() {
        let a = pack(&header(1, 4, 2), &[0, 1, 2, 3]).unwrap();
        let b = pack(&header(2, 1, 7), &[100, 5]).unwrap();
        let mut file = Vec::new();
        write_capture(&mut file, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(file.len(), 8 + a.len() + b.len());
        assert_eq!(read_capture(file.as_slice()).unwrap(), vec![a, b]);
        assert!(read_capture(&file[..file.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(bits in 0u8..=32, m in 0u32..5, v in 0u32..40, seed in any::<u64>(), node in any::<u16>()) {
            let h = PayloadHeader { node_id: node, dither_seed: seed, ..header(m, v, bits) };
            let mask = if bits == 32 { u32::MAX } else { (1u32 << bits) - 1 };
            let idx: Vec<u32> = (0..(m * v) as u64)
                .map(|i| (crate::rng::splitmix64(seed ^ i) as u32) & mask)
                .collect();
            let b = pack(&h, &idx).unwrap();
            prop_assert_eq!(b.len(), HEADER_LEN + (h.body_bits() as usize).div_ceil(8));
            let (h2, idx2) = unpack(&b).unwrap();
            prop_assert_eq!(h2, h);
            prop_assert_eq!(idx2, idx);
        }
    }
}
