//! Fixed-ratio tuning of error-bounded lossy compressors.
//!
//! Given a dataset and a target compression ratio, the tuner searches for the
//! error bound whose achieved ratio lands within a relative tolerance of the
//! target, treating the compressor as a black box.

pub mod codecs;
pub mod compressor;
pub mod config;
pub mod error;
pub mod external;
pub mod io;
pub mod model;
pub mod metrics;
pub mod optimizer;
pub mod orchestrator;
pub mod report;
pub mod synthetic;

pub use compressor::{CapabilitySet, Codec, CompressedBuffer, CompressorHandle, Registry};
pub use error::{Error, Result};
pub use model::{
    acceptance_interval, Dataset, ElementKind, ErrorControl, ErrorKind, FieldSeries, Region,
    RegionTrace, StepRecord, TargetSpec, TuneResult,
};
pub use optimizer::{find_min_global_with_cutoff, LossKind, LossSpec, SearchTrace, Termination};
