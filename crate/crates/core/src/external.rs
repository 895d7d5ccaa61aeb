//! Compressors that live in another executable.
//!
//! The program is invoked once per operation:
//!
//! ```text
//! PROGRAM --op compress|decompress --input PATH --output PATH
//!         --shape D1,D2,... --dtype f32|f64 --mode abs|mse --bound E
//! ```
//!
//! For `compress` the input is the raw little-endian array and the output is
//! the payload; `decompress` is the reverse. Exit status 0 means success, 2
//! means the bound is not supported, anything else is a failure whose stderr
//! is reported. Each call works in its own temporary directory, so handles
//! backed by an external program are always reentrant.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::compressor::{param, CapabilitySet, Codec};
use crate::error::{Error, Result};
use crate::io::{decode_raw, encode_raw};
use crate::model::{element_count, Dataset, ElementKind, ErrorKind};

/// Exit status meaning "bound not supported".
pub const EXIT_BOUND_UNSUPPORTED: i32 = 2;

#[derive(Debug, Clone)]
pub struct ExternalCodec {
    program: PathBuf,
    extra_args: Vec<String>,
    dims: BTreeSet<usize>,
    controls: Vec<ErrorKind>,
    min_error_bound: Option<f64>,
}

impl ExternalCodec {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        ExternalCodec {
            program: program.into(),
            extra_args: Vec::new(),
            dims: [1, 2, 3].into_iter().collect(),
            controls: vec![ErrorKind::AbsoluteMaxError],
            min_error_bound: None,
        }
    }

    /// Arguments placed before the protocol flags.
    pub fn with_args(mut self, args: Vec<String>) -> Self {
        self.extra_args = args;
        self
    }

    pub fn with_dims(mut self, dims: impl IntoIterator<Item = usize>) -> Self {
        self.dims = dims.into_iter().collect();
        self
    }

    pub fn with_controls(mut self, controls: &[ErrorKind]) -> Self {
        self.controls = controls.to_vec();
        self
    }

    pub fn with_min_error_bound(mut self, min: Option<f64>) -> Self {
        self.min_error_bound = min;
        self
    }

    /// Parameters: `program` (required), `args` (space separated), `dims`
    /// (comma separated, default `1,2,3`), `controls` (default `abs`),
    /// `min_bound`.
    pub fn from_params(params: &BTreeMap<String, String>) -> Result<Self> {
        let program = params
            .get("program")
            .ok_or_else(|| Error::InvalidArgument("external codec needs `program`".into()))?;
        let dims = parse_list::<usize>(params.get("dims").map_or("1,2,3", |s| s), "dims")?;
        let controls =
            parse_list::<ErrorKind>(params.get("controls").map_or("abs", |s| s), "controls")?;
        let min: f64 = param(params, "min_bound", f64::NAN)?;
        let codec = ExternalCodec::new(program)
            .with_args(
                params
                    .get("args")
                    .map(|a| a.split_whitespace().map(String::from).collect())
                    .unwrap_or_default(),
            )
            .with_dims(dims)
            .with_controls(&controls)
            .with_min_error_bound(if min.is_nan() { None } else { Some(min) });
        codec.capabilities_checked()?;
        Ok(codec)
    }

    pub fn program(&self) -> &Path {
        &self.program
    }

    fn capabilities_checked(&self) -> Result<CapabilitySet> {
        CapabilitySet::new(
            self.dims.iter().copied(),
            &self.controls,
            true,
            self.min_error_bound,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn invoke(
        &self,
        op: &str,
        input: &[u8],
        shape: &[usize],
        kind: ElementKind,
        control: ErrorKind,
        bound: f64,
    ) -> Result<Vec<u8>> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let in_path = dir.path().join("input.bin");
        let out_path = dir.path().join("output.bin");
        fs::write(&in_path, input).map_err(|e| Error::io(&in_path, e))?;
        let shape_arg = shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let output = Command::new(&self.program)
            .args(&self.extra_args)
            .arg("--op")
            .arg(op)
            .arg("--input")
            .arg(&in_path)
            .arg("--output")
            .arg(&out_path)
            .arg("--shape")
            .arg(shape_arg)
            .arg("--dtype")
            .arg(kind.to_string())
            .arg("--mode")
            .arg(control.flag())
            .arg("--bound")
            .arg(format!("{bound:e}"))
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        match output.status.code() {
            Some(0) => fs::read(&out_path).map_err(|e| Error::io(&out_path, e)),
            Some(EXIT_BOUND_UNSUPPORTED) => Err(Error::BoundUnsupported {
                codec: self.name().to_string(),
                bound,
            }),
            status => Err(Error::Codec {
                codec: self.name().to_string(),
                message: format!(
                    "{} {op} exited with {}: {}",
                    self.program.display(),
                    status.map_or("a signal".to_string(), |c| format!("status {c}")),
                    String::from_utf8_lossy(&output.stderr).trim()
                ),
            }),
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, key: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("invalid `{key}` entry `{p}`")))
        })
        .collect()
}

impl Codec for ExternalCodec {
    fn name(&self) -> &str {
        "external"
    }

    fn capabilities(&self) -> CapabilitySet {
        self.capabilities_checked()
            .expect("validated at construction")
    }

    fn encode(&self, data: &Dataset, control: ErrorKind, bound: f64) -> Result<Vec<u8>> {
        self.invoke(
            "compress",
            &encode_raw(data.values(), data.kind()),
            data.shape(),
            data.kind(),
            control,
            bound,
        )
    }

    fn decode(
        &self,
        payload: &[u8],
        shape: &[usize],
        kind: ElementKind,
        control: ErrorKind,
        bound: f64,
    ) -> Result<Vec<f64>> {
        let raw = self.invoke("decompress", payload, shape, kind, control, bound)?;
        let expected = element_count(shape)? * kind.width();
        if raw.len() != expected {
            return Err(Error::Codec {
                codec: self.name().to_string(),
                message: format!("decompressed {} bytes, expected {expected}", raw.len()),
            });
        }
        Ok(decode_raw(&raw, kind))
    }
}
