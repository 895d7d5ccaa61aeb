//! Block transform + bitplane truncation codec.
//!
//! The array is cut into blocks of `edge^N` samples (partial blocks at the
//! upper faces hold only in-range samples). Every sample is converted to a
//! fixed-point integer `q = round(v / step)` with the global step
//! `step = 2^floor(log2(bound))`; a block with exponent
//! `E = floor(log2(max |v|))` then needs `W = E - floor(log2(bound)) + 3` bits
//! per sample in two's complement, written as W bitplanes, most significant
//! plane first.
//!
//! A block whose samples all satisfy `|v| <= step / 2` is stored as zeros with
//! no bits; a block where `W` reaches the sample width is stored verbatim.
//! Every size decision depends on the bound only through
//! `floor(log2(bound))`, so the compressed size, and with it the ratio, is a
//! step function of the bound.
//!
//! Reconstruction error is at most `step / 2` before rounding to the element
//! kind, and at most `step <= bound` after it.
//!
//! Payload layout:
//!
//! ```text
//! u8          block edge
//! i32         floor(log2(bound))
//! nblocks x u8  block mode: 0 zero, 255 verbatim, otherwise W
//! bytes       bitstream (MSB first), exactly ceil(total bits / 8) bytes
//! ```

use std::collections::BTreeMap;

use super::bitio::{BitReader, BitWriter, ByteReader};
use crate::compressor::{container, param, CapabilitySet, Codec, CompressedBuffer};
use crate::error::{Error, Result};
use crate::model::{element_count, Dataset, ElementKind, ErrorKind};

const ZERO_BLOCK: u8 = 0;
const RAW_BLOCK: u8 = 255;
/// Codes packed per bitstream write/read; the stream itself is bit-serial.
const PLANE_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BtConfig {
    pub block_edge: usize,
}

impl Default for BtConfig {
    fn default() -> Self {
        BtConfig { block_edge: 4 }
    }
}

impl BtConfig {
    pub fn new(block_edge: usize) -> Result<Self> {
        if !(2..=255).contains(&block_edge) {
            return Err(Error::InvalidArgument(format!(
                "block edge must lie in [2, 255], got {block_edge}"
            )));
        }
        Ok(BtConfig { block_edge })
    }

    /// Recognizes `block_edge=<n>`.
    pub fn from_params(params: &BTreeMap<String, String>) -> Result<Self> {
        Self::new(param(params, "block_edge", 4usize)?)
    }
}

/// `floor(log2(x))` for positive finite `x`, exact for subnormals too.
pub fn floor_log2(x: f64) -> i32 {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    if exp == 0 {
        let mantissa = bits & ((1u64 << 52) - 1);
        -1074 + (63 - mantissa.leading_zeros() as i32)
    } else {
        exp - 1023
    }
}

fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// Flat indices grouped block by block, each block in row-major order.
fn block_order(shape: &[usize], edge: usize) -> (Vec<usize>, Vec<usize>) {
    let n = shape.len();
    let grid: Vec<usize> = shape.iter().map(|&s| s.div_ceil(edge)).collect();
    let mut strides = vec![1usize; n];
    for d in (0..n.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let total: usize = shape.iter().product();
    let mut order = Vec::with_capacity(total);
    let mut sizes = Vec::with_capacity(grid.iter().product());

    let mut block = vec![0usize; n];
    loop {
        let extent: Vec<usize> = (0..n)
            .map(|d| edge.min(shape[d] - block[d] * edge))
            .collect();
        let start = order.len();
        let mut local = vec![0usize; n];
        'inner: loop {
            let flat: usize = (0..n)
                .map(|d| (block[d] * edge + local[d]) * strides[d])
                .sum();
            order.push(flat);
            for d in (0..n).rev() {
                local[d] += 1;
                if local[d] < extent[d] {
                    continue 'inner;
                }
                local[d] = 0;
            }
            break;
        }
        sizes.push(order.len() - start);

        let mut d = n;
        loop {
            if d == 0 {
                return (order, sizes);
            }
            d -= 1;
            block[d] += 1;
            if block[d] < grid[d] {
                break;
            }
            block[d] = 0;
        }
    }
}

fn check_bound(bound: f64) -> Result<i32> {
    if !(bound.is_finite() && bound >= f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument(format!(
            "bt requires a positive normal bound, got {bound}"
        )));
    }
    Ok(floor_log2(bound))
}

fn sample_bits(v: f64, kind: ElementKind) -> u64 {
    match kind {
        ElementKind::F32 => (v as f32).to_bits() as u64,
        ElementKind::F64 => v.to_bits(),
    }
}

fn sample_from_bits(bits: u64, kind: ElementKind) -> f64 {
    match kind {
        ElementKind::F32 => f32::from_bits(bits as u32) as f64,
        ElementKind::F64 => f64::from_bits(bits),
    }
}

pub fn encode(data: &Dataset, bound: f64, cfg: BtConfig) -> Result<Vec<u8>> {
    let fl = check_bound(bound)?;
    let step = pow2(fl);
    let half = step * 0.5;
    let kind = data.kind();
    let width_bits = (kind.width() * 8) as i64;
    let values = data.values();
    let (order, sizes) = block_order(data.shape(), cfg.block_edge);

    let mut modes = Vec::with_capacity(sizes.len());
    let mut bits = BitWriter::new();
    let mut q = Vec::with_capacity(cfg.block_edge.pow(data.dims() as u32));
    let mut start = 0;
    for &size in &sizes {
        let idx = &order[start..start + size];
        start += size;
        let max_abs = idx.iter().map(|&i| values[i].abs()).fold(0.0, f64::max);
        if max_abs <= half {
            modes.push(ZERO_BLOCK);
            continue;
        }
        let w = floor_log2(max_abs) as i64 - fl as i64 + 3;
        if w >= width_bits {
            modes.push(RAW_BLOCK);
            for &i in idx {
                bits.write(sample_bits(values[i], kind), width_bits as u32);
            }
            continue;
        }
        let w = w as u32;
        modes.push(w as u8);
        q.clear();
        q.extend(idx.iter().map(|&i| (values[i] / step).round() as i64 as u64));
        for plane in (0..w).rev() {
            for chunk in q.chunks(PLANE_CHUNK) {
                let word = chunk
                    .iter()
                    .fold(0u64, |acc, &code| (acc << 1) | ((code >> plane) & 1));
                bits.write(word, chunk.len() as u32);
            }
        }
    }

    let mut out = Vec::with_capacity(5 + modes.len());
    out.push(cfg.block_edge as u8);
    out.extend_from_slice(&fl.to_le_bytes());
    out.extend_from_slice(&modes);
    out.extend_from_slice(&bits.finish());
    Ok(out)
}

pub fn decode(payload: &[u8], shape: &[usize], kind: ElementKind, bound: f64) -> Result<Vec<f64>> {
    check_bound(bound)?;
    let n = element_count(shape)?;
    let mut r = ByteReader::new(payload);
    let edge = r.u8()? as usize;
    let cfg = BtConfig::new(edge).map_err(|e| Error::corrupted(e.to_string()))?;
    let fl = r.i32()?;
    if !(-1022..=1023).contains(&fl) {
        return Err(Error::corrupted(format!("bad exponent {fl}")));
    }
    let step = pow2(fl);
    let width_bits = (kind.width() * 8) as u32;
    let (order, sizes) = block_order(shape, cfg.block_edge);
    let modes = r.take(sizes.len())?;

    let mut total_bits: u64 = 0;
    for (&mode, &size) in modes.iter().zip(&sizes) {
        let w = match mode {
            ZERO_BLOCK => 0,
            RAW_BLOCK => width_bits,
            w if (2..width_bits).contains(&(w as u32)) => w as u32,
            w => return Err(Error::corrupted(format!("bad block mode {w}"))),
        };
        total_bits += w as u64 * size as u64;
    }
    let stream = r.rest();
    if stream.len() as u64 != total_bits.div_ceil(8) {
        return Err(Error::corrupted(format!(
            "bitstream has {} bytes, block modes require {}",
            stream.len(),
            total_bits.div_ceil(8)
        )));
    }

    let mut out = vec![0.0; n];
    let mut bits = BitReader::new(stream);
    let mut q = Vec::new();
    let mut start = 0;
    for (&mode, &size) in modes.iter().zip(&sizes) {
        let idx = &order[start..start + size];
        start += size;
        match mode {
            ZERO_BLOCK => {}
            RAW_BLOCK => {
                for &i in idx {
                    let v = sample_from_bits(bits.read(width_bits)?, kind);
                    if !v.is_finite() {
                        return Err(Error::corrupted("non-finite verbatim sample"));
                    }
                    out[i] = v;
                }
            }
            w => {
                let w = w as u32;
                q.clear();
                q.resize(size, 0u64);
                for plane in (0..w).rev() {
                    for chunk in q.chunks_mut(PLANE_CHUNK) {
                        let word = bits.read(chunk.len() as u32)?;
                        let top = chunk.len() - 1;
                        for (k, code) in chunk.iter_mut().enumerate() {
                            *code |= ((word >> (top - k)) & 1) << plane;
                        }
                    }
                }
                let shift = 64 - w;
                for (&i, &code) in idx.iter().zip(&q) {
                    let signed = ((code << shift) as i64) >> shift;
                    out[i] = kind.round(signed as f64 * step);
                }
            }
        }
    }
    debug_assert_eq!(start, n);
    Ok(out)
}

pub fn bt_compress(d: &Dataset, bound: f64, cfg: BtConfig) -> Result<CompressedBuffer> {
    Ok(CompressedBuffer {
        bytes: encode(d, bound, cfg)?,
        original_shape: d.shape().to_vec(),
        original_kind: d.kind(),
        codec_name: "bt".into(),
        codec_id: container::BT_ID,
        error_bound_used: bound,
    })
}

pub fn bt_decompress(buf: &CompressedBuffer) -> Result<Dataset> {
    if buf.codec_id != container::BT_ID {
        return Err(Error::CodecMismatch {
            expected: "bt".into(),
            found: buf.codec_name.clone(),
        });
    }
    let values = decode(
        &buf.bytes,
        &buf.original_shape,
        buf.original_kind,
        buf.error_bound_used,
    )?;
    Dataset::new("decoded", 0, buf.original_shape.clone(), buf.original_kind, values)
}

#[derive(Debug, Clone, Default)]
pub struct BtCodec {
    cfg: BtConfig,
}

impl BtCodec {
    pub fn new(cfg: BtConfig) -> Self {
        BtCodec { cfg }
    }
}

impl Codec for BtCodec {
    fn name(&self) -> &str {
        "bt"
    }

    fn capabilities(&self) -> CapabilitySet {
        CapabilitySet::new(1..=4, &[ErrorKind::AbsoluteMaxError], true, Some(f64::MIN_POSITIVE))
            .expect("static capabilities")
    }

    fn container_id(&self) -> u8 {
        container::BT_ID
    }

    fn encode(&self, data: &Dataset, _: ErrorKind, bound: f64) -> Result<Vec<u8>> {
        encode(data, bound, self.cfg)
    }

    fn decode(
        &self,
        payload: &[u8],
        shape: &[usize],
        kind: ElementKind,
        _: ErrorKind,
        bound: f64,
    ) -> Result<Vec<f64>> {
        decode(payload, shape, kind, bound)
    }
}
