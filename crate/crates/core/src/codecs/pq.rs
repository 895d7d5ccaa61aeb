//! Prediction + quantization codec.
//!
//! Each sample is predicted by a one-layer Lorenzo predictor from already
//! *reconstructed* neighbors, and the residual is quantized with step
//! `2 * bound`:
//!
//! ```text
//! code  = round((pred - true) / (2 * bound))
//! recon = pred - 2 * bound * code
//! ```
//!
//! Codes with magnitude >= 2^15, or whose reconstruction (after rounding to
//! the element kind) would exceed the bound, are replaced by an escape symbol
//! and the sample is stored verbatim. The code stream is Huffman coded and
//! optionally passed through an LZ4 block (64 KiB window).
//!
//! Payload layout:
//!
//! ```text
//! u8                    flags (bit 0: dictionary stage)
//! [u32 inner length]    only with the dictionary stage
//! inner | lz4(inner)
//!
//! inner:
//!   huffman stream      symbols = code + 2^15, escape = 0
//!   u64                 escape count e
//!   e x sample          raw little-endian samples of the element kind
//! ```

use std::collections::BTreeMap;

use super::bitio::ByteReader;
use super::huffman;
use crate::compressor::{container, param, CapabilitySet, Codec, CompressedBuffer};
use crate::error::{Error, Result};
use crate::io::{decode_raw, encode_raw};
use crate::model::{element_count, Dataset, ElementKind, ErrorKind};

const ESCAPE: u16 = 0;
const CODE_OFFSET: i32 = 1 << 15;
/// `|round(q)| <= 2^15 - 1` exactly when `|q| < 2^15 - 0.5`.
const CODE_LIMIT: f64 = 32767.5;
const FLAG_DICTIONARY: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    /// One-layer Lorenzo predictor.
    Lorenzo1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PqConfig {
    pub predictor: Predictor,
    /// Run the LZ dictionary pass after entropy coding.
    pub dictionary_stage: bool,
}

impl Default for PqConfig {
    fn default() -> Self {
        PqConfig {
            predictor: Predictor::Lorenzo1,
            dictionary_stage: true,
        }
    }
}

impl PqConfig {
    /// Recognizes `dictionary=true|false` and `predictor=lorenzo1`.
    pub fn from_params(params: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(p) = params.get("predictor") {
            if p != "lorenzo1" && p != "lorenzo" {
                return Err(Error::InvalidArgument(format!("unknown predictor `{p}`")));
            }
        }
        Ok(PqConfig {
            predictor: Predictor::Lorenzo1,
            dictionary_stage: param(params, "dictionary", true)?,
        })
    }
}

/// Inclusion-exclusion Lorenzo stencil over all 2^N - 1 corner neighbors.
///
/// Reconstructed values live in a buffer padded with one layer of zeros
/// before every axis, so samples on the low faces need no special casing:
/// a missing neighbor simply contributes zero.
struct Lorenzo {
    /// `(offset into the padded buffer, sign)` per stencil term.
    terms: Vec<(usize, f64)>,
    shape: Vec<usize>,
    padded_strides: Vec<usize>,
}

impl Lorenzo {
    fn new(shape: &[usize]) -> Self {
        let n = shape.len();
        let mut padded_strides = vec![1usize; n];
        for d in (0..n.saturating_sub(1)).rev() {
            padded_strides[d] = padded_strides[d + 1] * (shape[d + 1] + 1);
        }
        let terms = (1u32..(1 << n))
            .map(|mask| {
                let offset = (0..n)
                    .filter(|d| mask & (1 << d) != 0)
                    .map(|d| padded_strides[d])
                    .sum();
                let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
                (offset, sign)
            })
            .collect();
        Lorenzo {
            terms,
            shape: shape.to_vec(),
            padded_strides,
        }
    }

    /// Visits every flat index in row-major order with its prediction;
    /// `visit` returns the reconstructed sample. Returns all reconstructed
    /// samples.
    fn run(&self, mut visit: impl FnMut(usize, f64) -> f64) -> Vec<f64> {
        let dims = self.shape.len();
        let row_len = self.shape[dims - 1];
        let total: usize = self.shape.iter().product();
        let padded_len: usize = self.shape.iter().map(|s| s + 1).product();
        let mut buf = vec![0.0; padded_len];
        let mut out = vec![0.0; total];
        let mut outer = vec![0usize; dims - 1];
        let mut i = 0;
        for _ in 0..total / row_len {
            // padded index of the first sample of this row
            let base: usize = outer
                .iter()
                .zip(&self.padded_strides)
                .map(|(&c, &s)| (c + 1) * s)
                .sum::<usize>()
                + 1;
            for p in base..base + row_len {
                let mut pred = 0.0;
                for &(offset, sign) in &self.terms {
                    pred += sign * buf[p - offset];
                }
                let v = visit(i, pred);
                buf[p] = v;
                out[i] = v;
                i += 1;
            }
            for d in (0..dims - 1).rev() {
                outer[d] += 1;
                if outer[d] < self.shape[d] {
                    break;
                }
                outer[d] = 0;
            }
        }
        out
    }
}

fn check_bound(bound: f64) -> Result<()> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pq requires a positive bound, got {bound}"
        )));
    }
    Ok(())
}

/// Encodes `data` so that every reconstructed sample is within `bound`.
pub fn encode(data: &Dataset, bound: f64, cfg: PqConfig) -> Result<Vec<u8>> {
    check_bound(bound)?;
    let kind = data.kind();
    let values = data.values();
    let two_b = 2.0 * bound;
    let mut symbols = Vec::with_capacity(values.len());
    let mut escapes = Vec::new();

    Lorenzo::new(data.shape()).run(|i, pred| {
        let truth = values[i];
        let q = (pred - truth) / two_b;
        if q.abs() < CODE_LIMIT {
            let code = q.round();
            let r = kind.round(pred - two_b * code);
            if (r - truth).abs() <= bound {
                symbols.push((code as i32 + CODE_OFFSET) as u16);
                return r;
            }
        }
        symbols.push(ESCAPE);
        escapes.push(truth);
        truth
    });

    let mut inner = Vec::new();
    huffman::encode(&symbols, &mut inner);
    inner.extend_from_slice(&(escapes.len() as u64).to_le_bytes());
    inner.extend_from_slice(&encode_raw(&escapes, kind));

    let mut out = Vec::with_capacity(inner.len() + 5);
    if cfg.dictionary_stage {
        out.push(FLAG_DICTIONARY);
        out.extend_from_slice(&(inner.len() as u32).to_le_bytes());
        out.extend_from_slice(&lz4_flex::block::compress(&inner));
    } else {
        out.push(0);
        out.extend_from_slice(&inner);
    }
    Ok(out)
}

pub fn decode(payload: &[u8], shape: &[usize], kind: ElementKind, bound: f64) -> Result<Vec<f64>> {
    check_bound(bound)?;
    let n = element_count(shape)?;
    let mut r = ByteReader::new(payload);
    let flags = r.u8()?;
    let inflated;
    let inner: &[u8] = match flags {
        0 => r.rest(),
        FLAG_DICTIONARY => {
            let len = r.u32()? as usize;
            inflated = lz4_flex::block::decompress(r.rest(), len)
                .map_err(|e| Error::corrupted(format!("dictionary stage: {e}")))?;
            if inflated.len() != len {
                return Err(Error::corrupted("dictionary stage length mismatch"));
            }
            &inflated
        }
        other => return Err(Error::corrupted(format!("unknown pq flags {other:#x}"))),
    };

    let mut r = ByteReader::new(inner);
    let symbols = huffman::decode(&mut r, n)?;
    let n_escapes = usize::try_from(r.u64()?).map_err(|_| Error::corrupted("escape count"))?;
    let raw = r.take(
        n_escapes
            .checked_mul(kind.width())
            .ok_or_else(|| Error::corrupted("escape count overflows"))?,
    )?;
    r.expect_end()?;
    let escapes = decode_raw(raw, kind);
    if symbols.iter().filter(|&&s| s == ESCAPE).count() != n_escapes {
        return Err(Error::corrupted("escape count does not match code stream"));
    }

    let two_b = 2.0 * bound;
    let mut next_escape = escapes.iter();
    let recon = Lorenzo::new(shape).run(|i, pred| match symbols[i] {
        ESCAPE => *next_escape.next().expect("escape count checked"),
        s => kind.round(pred - two_b * (s as i32 - CODE_OFFSET) as f64),
    });
    if recon.iter().any(|v| !v.is_finite()) {
        return Err(Error::corrupted("non-finite reconstruction"));
    }
    Ok(recon)
}

/// Compresses `d` under an absolute bound.
pub fn pq_compress(d: &Dataset, bound: f64, cfg: PqConfig) -> Result<CompressedBuffer> {
    Ok(CompressedBuffer {
        bytes: encode(d, bound, cfg)?,
        original_shape: d.shape().to_vec(),
        original_kind: d.kind(),
        codec_name: "pq".into(),
        codec_id: container::PQ_ID,
        error_bound_used: bound,
    })
}

pub fn pq_decompress(buf: &CompressedBuffer) -> Result<Dataset> {
    if buf.codec_id != container::PQ_ID {
        return Err(Error::CodecMismatch {
            expected: "pq".into(),
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
pub struct PqCodec {
    cfg: PqConfig,
}

impl PqCodec {
    pub fn new(cfg: PqConfig) -> Self {
        PqCodec { cfg }
    }

    pub fn config(&self) -> PqConfig {
        self.cfg
    }
}

impl Codec for PqCodec {
    fn name(&self) -> &str {
        "pq"
    }

    fn capabilities(&self) -> CapabilitySet {
        CapabilitySet::new([1, 2, 3], &[ErrorKind::AbsoluteMaxError], true, None)
            .expect("static capabilities")
    }

    fn container_id(&self) -> u8 {
        container::PQ_ID
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{noisy_field, smooth_field};
    use proptest::prelude::*;

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn ratio(d: &Dataset, bound: f64, cfg: PqConfig) -> f64 {
        d.byte_size() as f64 / encode(d, bound, cfg).unwrap().len() as f64
    }

    #[test]
    fn lorenzo_is_exact_on_affine_data() {
        // a 3-D affine field is predicted exactly away from the low faces
        let shape = [4usize, 5, 6];
        let mut v = Vec::new();
        for i in 0..4 {
            for j in 0..5 {
                for k in 0..6 {
                    v.push(1.5 * i as f64 - 2.0 * j as f64 + 0.25 * k as f64 + 3.0);
                }
            }
        }
        let mut worst: f64 = 0.0;
        let recon = Lorenzo::new(&shape).run(|i, pred| {
            let (a, rest) = (i / 30, i % 30);
            let (b, c) = (rest / 6, rest % 6);
            if a > 0 && b > 0 && c > 0 {
                worst = worst.max((pred - v[i]).abs());
            }
            v[i]
        });
        assert!(worst < 1e-12);
        assert_eq!(recon, v);
    }

    #[test]
    fn zeros_compress_extremely_well() {
        let d = Dataset::from_values(vec![65536], ElementKind::F32, vec![0.0; 65536]).unwrap();
        for bound in [1e-6, 1e-3, 1.0] {
            let r = ratio(&d, bound, PqConfig::default());
            assert!(r > 100.0, "ratio {r} at bound {bound}");
        }
    }

    #[test]
    fn constant_data_compresses_well() {
        let d = Dataset::from_values(vec![4096], ElementKind::F32, vec![3.0; 4096]).unwrap();
        let bytes = encode(&d, 1e-3, PqConfig::default()).unwrap();
        assert!(bytes.len() * 50 < 16384, "{} bytes", bytes.len());
        let back = decode(&bytes, &[4096], ElementKind::F32, 1e-3).unwrap();
        assert!(max_err(d.values(), &back) <= 1e-3);
    }

    #[test]
    fn ramp_with_small_step_has_one_dominant_code() {
        let h = 1.0 / 1024.0;
        let d = Dataset::from_values(
            vec![65536],
            ElementKind::F32,
            (0..65536).map(|i| (i % 4096) as f64 * h).collect(),
        )
        .unwrap();
        let r = ratio(&d, 4.0 * h, PqConfig::default());
        assert!(r > 30.0, "ratio {r}");
    }

    #[test]
    fn seeded_noisy_data_respects_bound() {
        let d = noisy_field(&[1000], 7);
        for bound in [1e-4, 1e-3, 1e-2] {
            for cfg in [PqConfig::default(), PqConfig { dictionary_stage: false, ..PqConfig::default() }] {
                let bytes = encode(&d, bound, cfg).unwrap();
                let back = decode(&bytes, d.shape(), d.kind(), bound).unwrap();
                assert!(max_err(d.values(), &back) <= bound);
            }
        }
    }

    #[test]
    fn smooth_data_ratio_grows_with_bound() {
        let d = smooth_field(&[65536], 3);
        assert!(ratio(&d, 1e-2, PqConfig::default()) > ratio(&d, 1e-4, PqConfig::default()));
    }

    #[test]
    fn tiny_bounds_fall_back_to_escapes() {
        let d = noisy_field(&[256], 1);
        let bound = f32::MIN_POSITIVE as f64;
        let bytes = encode(&d, bound, PqConfig::default()).unwrap();
        let back = decode(&bytes, d.shape(), d.kind(), bound).unwrap();
        assert_eq!(back, d.values());
    }

    #[test]
    fn truncated_payload_is_corrupted() {
        let d = noisy_field(&[32, 32], 2);
        for cfg in [PqConfig::default(), PqConfig { dictionary_stage: false, ..PqConfig::default() }] {
            let mut bytes = encode(&d, 1e-3, cfg).unwrap();
            bytes.pop();
            assert!(matches!(
                decode(&bytes, d.shape(), d.kind(), 1e-3),
                Err(Error::Corrupted(_))
            ));
        }
    }

    #[test]
    fn rejects_non_positive_bound() {
        let d = noisy_field(&[16], 0);
        assert!(encode(&d, 0.0, PqConfig::default()).is_err());
        assert!(encode(&d, -1.0, PqConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn bound_respected_in_all_layouts(
            seed in any::<u64>(),
            dims in 1usize..=3,
            exp in -6.0f64..0.0,
            f64_kind in any::<bool>(),
        ) {
            let shape: Vec<usize> = match dims { 1 => vec![300], 2 => vec![13, 17], _ => vec![5, 6, 7] };
            let mut d = noisy_field(&shape, seed);
            if f64_kind {
                d = Dataset::from_values(shape.clone(), ElementKind::F64, d.values().to_vec()).unwrap();
            }
            let bound = 10f64.powf(exp);
            let a = encode(&d, bound, PqConfig::default()).unwrap();
            let b = encode(&d, bound, PqConfig::default()).unwrap();
            prop_assert_eq!(&a, &b);
            let back = decode(&a, &shape, d.kind(), bound).unwrap();
            prop_assert!(max_err(d.values(), &back) <= bound);
        }
    }
}
