//! Uniform facade over error-bounded compressors.
//!
//! A [`Codec`] is the raw algorithm; a [`CompressorHandle`] wraps one with its
//! fixed parameters, its error-control mode and the bookkeeping the tuner
//! needs (serialization of non-reentrant codecs, call counters). The tuner
//! only ever sees the closure `bound -> ratio` exposed by
//! [`CompressorHandle::eval_ratio`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::codecs::bt::{BtCodec, BtConfig};
use crate::codecs::pq::{PqCodec, PqConfig};
use crate::error::{Error, Result};
use crate::external::ExternalCodec;
use crate::model::{Dataset, ElementKind, ErrorKind};

/// What a codec can do.
#[derive(Debug, Clone, PartialEq)]
pub struct CapabilitySet {
    pub supported_dims: BTreeSet<usize>,
    pub supported_controls: Vec<ErrorKind>,
    /// May run concurrently with different settings in one process.
    pub reentrant: bool,
    /// Smallest accepted bound. `None` means the smallest positive normal
    /// value of the dataset's element kind.
    pub min_error_bound: Option<f64>,
}

impl CapabilitySet {
    pub fn new(
        dims: impl IntoIterator<Item = usize>,
        controls: &[ErrorKind],
        reentrant: bool,
        min_error_bound: Option<f64>,
    ) -> Result<Self> {
        let supported_dims: BTreeSet<usize> = dims.into_iter().collect();
        if supported_dims.is_empty() || supported_dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "a codec must support at least one positive dimensionality".into(),
            ));
        }
        if controls.is_empty() {
            return Err(Error::InvalidArgument(
                "a codec must support at least one error control".into(),
            ));
        }
        if let Some(m) = min_error_bound {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::InvalidArgument(format!("invalid minimum bound {m}")));
            }
        }
        Ok(CapabilitySet {
            supported_dims,
            supported_controls: controls.to_vec(),
            reentrant,
            min_error_bound,
        })
    }

    pub fn min_bound_for(&self, kind: ElementKind) -> f64 {
        self.min_error_bound
            .unwrap_or_else(|| kind.min_positive_normal())
    }
}

/// An error-bounded compression algorithm.
///
/// Implementations must be deterministic: identical inputs produce identical
/// payloads.
pub trait Codec: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn capabilities(&self) -> CapabilitySet;

    /// Identifier written into the container header.
    fn container_id(&self) -> u8 {
        container::EXTERNAL_ID
    }

    fn encode(&self, data: &Dataset, control: ErrorKind, bound: f64) -> Result<Vec<u8>>;

    fn decode(
        &self,
        payload: &[u8],
        shape: &[usize],
        kind: ElementKind,
        control: ErrorKind,
        bound: f64,
    ) -> Result<Vec<f64>>;
}

/// Compressed payload plus the metadata needed to decode it.
///
/// `bytes` holds only the codec payload; the container header written by
/// [`CompressedBuffer::to_container`] is not part of the compressed size.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBuffer {
    pub bytes: Vec<u8>,
    pub original_shape: Vec<usize>,
    pub original_kind: ElementKind,
    pub codec_name: String,
    pub codec_id: u8,
    pub error_bound_used: f64,
}

impl CompressedBuffer {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn to_container(&self) -> Vec<u8> {
        container::write(self)
    }

    pub fn from_container(bytes: &[u8]) -> Result<Self> {
        container::read(bytes)
    }
}

/// Self-describing on-disk buffer layout.
///
/// ```text
/// 4 bytes   magic "RTCB"
/// 1 byte    codec id (0 identity, 1 pq, 2 bt, 255 external)
/// 1 byte    format version (1)
/// 1 byte    element kind (0 f32, 1 f64)
/// 1 byte    dimension count N
/// N x u64   extents, little-endian, slowest axis first
/// f64       error bound, little-endian IEEE 754
/// ...       codec payload
/// ```
pub mod container {
    use super::CompressedBuffer;
    use crate::codecs::bitio::ByteReader;
    use crate::error::{Error, Result};
    use crate::model::{element_count, ElementKind};

    pub const MAGIC: [u8; 4] = *b"RTCB";
    pub const VERSION: u8 = 1;
    pub const IDENTITY_ID: u8 = 0;
    pub const PQ_ID: u8 = 1;
    pub const BT_ID: u8 = 2;
    pub const EXTERNAL_ID: u8 = 255;

    pub fn codec_name_for(id: u8) -> &'static str {
        match id {
            IDENTITY_ID => "identity",
            PQ_ID => "pq",
            BT_ID => "bt",
            _ => "external",
        }
    }

    pub fn header_len(dims: usize) -> usize {
        4 + 4 + 8 * dims + 8
    }

    pub fn write(buf: &CompressedBuffer) -> Vec<u8> {
        let mut out = Vec::with_capacity(header_len(buf.original_shape.len()) + buf.bytes.len());
        out.extend_from_slice(&MAGIC);
        out.push(buf.codec_id);
        out.push(VERSION);
        out.push(buf.original_kind.code());
        out.push(buf.original_shape.len() as u8);
        for &e in &buf.original_shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.extend_from_slice(&buf.error_bound_used.to_le_bytes());
        out.extend_from_slice(&buf.bytes);
        out
    }

    pub fn read(bytes: &[u8]) -> Result<CompressedBuffer> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::corrupted("bad magic"));
        }
        let codec_id = r.u8()?;
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::corrupted(format!("unsupported version {version}")));
        }
        let kind = ElementKind::from_code(r.u8()?)
            .ok_or_else(|| Error::corrupted("bad element kind"))?;
        let dims = r.u8()? as usize;
        let mut shape = Vec::with_capacity(dims);
        for _ in 0..dims {
            let e = usize::try_from(r.u64()?).map_err(|_| Error::corrupted("extent too large"))?;
            shape.push(e);
        }
        element_count(&shape).map_err(|e| Error::corrupted(e.to_string()))?;
        let bound = r.f64()?;
        Ok(CompressedBuffer {
            bytes: r.rest().to_vec(),
            original_shape: shape,
            original_kind: kind,
            codec_name: codec_name_for(codec_id).to_string(),
            codec_id,
            error_bound_used: bound,
        })
    }
}

/// Per-handle call counters, used by tests to observe concurrency.
#[derive(Debug, Default)]
pub struct CallStats {
    calls: AtomicU64,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl CallStats {
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    fn enter(&self) -> InFlight<'_> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(self)
    }
}

struct InFlight<'a>(&'a CallStats);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// A configured compressor, shareable across threads.
#[derive(Debug)]
pub struct CompressorHandle {
    name: String,
    codec: Arc<dyn Codec>,
    capabilities: CapabilitySet,
    control: ErrorKind,
    params: BTreeMap<String, String>,
    gate: Mutex<()>,
    stats: CallStats,
}

impl CompressorHandle {
    pub fn new(codec: Arc<dyn Codec>, control: ErrorKind) -> Result<Self> {
        Self::with_params(codec, control, BTreeMap::new())
    }

    pub fn with_params(
        codec: Arc<dyn Codec>,
        control: ErrorKind,
        params: BTreeMap<String, String>,
    ) -> Result<Self> {
        let capabilities = codec.capabilities();
        if !capabilities.supported_controls.contains(&control) {
            return Err(Error::UnsupportedControl {
                codec: codec.name().to_string(),
                control: control.to_string(),
            });
        }
        Ok(CompressorHandle {
            name: codec.name().to_string(),
            codec,
            capabilities,
            control,
            params,
            gate: Mutex::new(()),
            stats: CallStats::default(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn capabilities(&self) -> &CapabilitySet {
        &self.capabilities
    }

    pub fn control(&self) -> ErrorKind {
        self.control
    }

    pub fn params(&self) -> &BTreeMap<String, String> {
        &self.params
    }

    pub fn stats(&self) -> &CallStats {
        &self.stats
    }

    /// Smallest bound this handle accepts for `data`.
    pub fn min_bound(&self, kind: ElementKind) -> f64 {
        self.capabilities.min_bound_for(kind)
    }

    /// Checks dimensionality and bound preconditions without compressing.
    pub fn check_supported(&self, data: &Dataset, bound: f64) -> Result<()> {
        if !self.capabilities.supported_dims.contains(&data.dims()) {
            return Err(Error::UnsupportedDimensionality {
                codec: self.name.clone(),
                dims: data.dims(),
            });
        }
        let min = self.min_bound(data.kind());
        if !(bound.is_finite() && bound >= min) {
            return Err(Error::BoundTooSmall {
                codec: self.name.clone(),
                bound,
                min,
            });
        }
        Ok(())
    }

    pub fn compress(&self, data: &Dataset, bound: f64) -> Result<CompressedBuffer> {
        self.check_supported(data, bound)?;
        let bytes = self.guarded(|| self.codec.encode(data, self.control, bound))?;
        if bytes.is_empty() {
            return Err(Error::Codec {
                codec: self.name.clone(),
                message: "produced an empty buffer".into(),
            });
        }
        Ok(CompressedBuffer {
            bytes,
            original_shape: data.shape().to_vec(),
            original_kind: data.kind(),
            codec_name: self.name.clone(),
            codec_id: self.codec.container_id(),
            error_bound_used: bound,
        })
    }

    pub fn decompress(&self, buf: &CompressedBuffer) -> Result<Dataset> {
        if buf.codec_name != self.name {
            return Err(Error::CodecMismatch {
                expected: self.name.clone(),
                found: buf.codec_name.clone(),
            });
        }
        let values = self.guarded(|| {
            self.codec.decode(
                &buf.bytes,
                &buf.original_shape,
                buf.original_kind,
                self.control,
                buf.error_bound_used,
            )
        })?;
        Dataset::new(
            "decoded",
            0,
            buf.original_shape.clone(),
            buf.original_kind,
            values,
        )
        .map_err(|e| Error::corrupted(format!("decoded samples invalid: {e}")))
    }

    /// `raw size / compressed size` at `bound`.
    pub fn eval_ratio(&self, data: &Dataset, bound: f64) -> Result<f64> {
        let buf = self.compress(data, bound)?;
        Ok(data.byte_size() as f64 / buf.len() as f64)
    }

    fn guarded<T>(&self, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let _lock = if self.capabilities.reentrant {
            None
        } else {
            Some(self.gate.lock().unwrap_or_else(|p| p.into_inner()))
        };
        let _flight = self.stats.enter();
        f()
    }
}

/// Lossless passthrough; its ratio is exactly 1.
#[derive(Debug, Clone, Default)]
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn name(&self) -> &str {
        "identity"
    }

    fn capabilities(&self) -> CapabilitySet {
        CapabilitySet::new(
            1..=8,
            &[ErrorKind::AbsoluteMaxError, ErrorKind::MeanSquaredError],
            true,
            Some(0.0),
        )
        .expect("static capabilities")
    }

    fn container_id(&self) -> u8 {
        container::IDENTITY_ID
    }

    fn encode(&self, data: &Dataset, _: ErrorKind, _: f64) -> Result<Vec<u8>> {
        Ok(crate::io::encode_raw(data.values(), data.kind()))
    }

    fn decode(
        &self,
        payload: &[u8],
        shape: &[usize],
        kind: ElementKind,
        _: ErrorKind,
        _: f64,
    ) -> Result<Vec<f64>> {
        let n = crate::model::element_count(shape)?;
        if payload.len() != n * kind.width() {
            return Err(Error::corrupted(format!(
                "identity payload has {} bytes, expected {}",
                payload.len(),
                n * kind.width()
            )));
        }
        Ok(crate::io::decode_raw(payload, kind))
    }
}

type Factory = fn(&BTreeMap<String, String>) -> Result<Arc<dyn Codec>>;

/// Named codec constructors.
pub struct Registry {
    factories: BTreeMap<String, Factory>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            factories: BTreeMap::new(),
        }
    }

    /// `identity`, `pq`, `bt` and `external`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("identity", |_| Ok(Arc::new(IdentityCodec)))
            .expect("fresh registry");
        r.register("pq", |p| Ok(Arc::new(PqCodec::new(PqConfig::from_params(p)?))))
            .expect("fresh registry");
        r.register("bt", |p| Ok(Arc::new(BtCodec::new(BtConfig::from_params(p)?))))
            .expect("fresh registry");
        r.register("external", |p| Ok(Arc::new(ExternalCodec::from_params(p)?)))
            .expect("fresh registry");
        r
    }

    pub fn register(&mut self, name: &str, factory: Factory) -> Result<()> {
        if self.factories.contains_key(name) {
            return Err(Error::InvalidArgument(format!("codec `{name}` already registered")));
        }
        self.factories.insert(name.to_string(), factory);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    /// Builds a handle. The `mode` parameter (`abs` or `mse`, default `abs`)
    /// selects the error control; all other parameters go to the codec.
    pub fn create(&self, name: &str, params: &BTreeMap<String, String>) -> Result<CompressorHandle> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown codec `{name}`")))?;
        let control = match params.get("mode") {
            Some(m) => m.parse()?,
            None => ErrorKind::AbsoluteMaxError,
        };
        CompressorHandle::with_params(factory(params)?, control, params.clone())
    }
}

pub(crate) fn param<T: std::str::FromStr>(
    params: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("invalid value `{v}` for `{key}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Dataset {
        Dataset::from_values(vec![n], ElementKind::F32, (0..n).map(|i| i as f64 * 0.25).collect())
            .unwrap()
    }

    #[test]
    fn identity_ratio_is_exactly_one() {
        let h = CompressorHandle::new(Arc::new(IdentityCodec), ErrorKind::AbsoluteMaxError).unwrap();
        let d = ramp(100);
        assert_eq!(h.eval_ratio(&d, 0.0).unwrap(), 1.0);
        let buf = h.compress(&d, 0.0).unwrap();
        assert_eq!(h.decompress(&buf).unwrap().values(), d.values());
    }

    #[test]
    fn unsupported_dimensionality_rejected() {
        let h = Registry::builtin()
            .create("bt", &BTreeMap::new())
            .unwrap();
        let d = Dataset::from_values(vec![2, 2, 2, 2, 2], ElementKind::F32, vec![0.0; 32]).unwrap();
        assert!(matches!(
            h.compress(&d, 0.1),
            Err(Error::UnsupportedDimensionality { dims: 5, .. })
        ));
    }

    #[test]
    fn bound_below_minimum_rejected() {
        let h = Registry::builtin().create("pq", &BTreeMap::new()).unwrap();
        let d = ramp(16);
        assert!(matches!(h.compress(&d, 0.0), Err(Error::BoundTooSmall { .. })));
        assert!(matches!(h.compress(&d, -1.0), Err(Error::BoundTooSmall { .. })));
        assert!(matches!(h.compress(&d, f64::NAN), Err(Error::BoundTooSmall { .. })));
        assert!(h.compress(&d, f32::MIN_POSITIVE as f64).is_ok());
    }

    #[test]
    fn codec_mismatch_rejected() {
        let reg = Registry::builtin();
        let pq = reg.create("pq", &BTreeMap::new()).unwrap();
        let bt = reg.create("bt", &BTreeMap::new()).unwrap();
        let buf = pq.compress(&ramp(64), 0.01).unwrap();
        assert!(matches!(bt.decompress(&buf), Err(Error::CodecMismatch { .. })));
    }

    #[test]
    fn mse_mode_requires_capability() {
        let mut p = BTreeMap::new();
        p.insert("mode".to_string(), "mse".to_string());
        assert!(matches!(
            Registry::builtin().create("pq", &p),
            Err(Error::UnsupportedControl { .. })
        ));
        assert!(Registry::builtin().create("identity", &p).is_ok());
    }

    #[test]
    fn registry_names_unique() {
        let mut r = Registry::builtin();
        assert!(r.register("pq", |_| Ok(Arc::new(IdentityCodec))).is_err());
        assert!(Registry::builtin().create("nope", &BTreeMap::new()).is_err());
    }

    #[test]
    fn container_round_trip() {
        let h = Registry::builtin().create("bt", &BTreeMap::new()).unwrap();
        let d = Dataset::from_values(vec![4, 8], ElementKind::F64, (0..32).map(|i| i as f64).collect())
            .unwrap();
        let buf = h.compress(&d, 0.5).unwrap();
        let bytes = buf.to_container();
        assert_eq!(&bytes[..4], b"RTCB");
        assert_eq!(bytes[4], container::BT_ID);
        assert_eq!(bytes[5], 1);
        assert_eq!(bytes[6], 1);
        assert_eq!(bytes[7], 2);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 8);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 0.5);
        assert_eq!(&bytes[32..], &buf.bytes[..]);
        let back = CompressedBuffer::from_container(&bytes).unwrap();
        assert_eq!(back, buf);
    }
}
