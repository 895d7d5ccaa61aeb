//! Reference implementation of the external-codec protocol.
//!
//! Wraps one of the built-in codecs so the subprocess path can be exercised
//! end to end, and doubles as a template for wrapping other compressors:
//!
//! ```text
//! ratiotune-plugin [--codec pq|bt] [--reject-above B] \
//!     --op compress|decompress --input IN --output OUT \
//!     --shape D1,D2,... --dtype f32|f64 --mode abs|mse --bound E
//! ```
//!
//! `--reject-above` makes the plugin exit with status 2 for bounds above
//! `B`, simulating a compressor that refuses some settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use ratiotune::compressor::{CompressedBuffer, Registry};
use ratiotune::config::parse_shape;
use ratiotune::external::EXIT_BOUND_UNSUPPORTED;
use ratiotune::io::{decode_raw, encode_raw};
use ratiotune::{Dataset, ElementKind, Error, Result};

#[derive(Clone, Copy, ValueEnum)]
enum Op {
    Compress,
    Decompress,
}

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "pq")]
    codec: String,
    #[arg(long)]
    reject_above: Option<f64>,
    #[arg(long, value_enum)]
    op: Op,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    shape: String,
    #[arg(long)]
    dtype: ElementKind,
    #[arg(long)]
    mode: String,
    #[arg(long)]
    bound: f64,
}

fn io_err(path: &PathBuf, e: std::io::Error) -> Error {
    Error::Io {
        path: path.clone(),
        source: e,
    }
}

fn run(args: &Args) -> Result<()> {
    let mut params = BTreeMap::new();
    params.insert("mode".to_string(), args.mode.clone());
    let handle = Registry::builtin().create(&args.codec, &params)?;
    let shape = parse_shape(&args.shape)?;
    let input = fs::read(&args.input).map_err(|e| io_err(&args.input, e))?;
    let output = match args.op {
        Op::Compress => {
            let data = Dataset::from_values(shape, args.dtype, decode_raw(&input, args.dtype))?;
            handle.compress(&data, args.bound)?.bytes
        }
        Op::Decompress => {
            let buf = CompressedBuffer {
                bytes: input,
                original_shape: shape,
                original_kind: args.dtype,
                codec_name: handle.name().to_string(),
                codec_id: 0,
                error_bound_used: args.bound,
            };
            let data = handle.decompress(&buf)?;
            encode_raw(data.values(), data.kind())
        }
    };
    fs::write(&args.output, output).map_err(|e| io_err(&args.output, e))
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.reject_above.is_some_and(|b| args.bound > b) {
        eprintln!("bound {} not supported", args.bound);
        return ExitCode::from(EXIT_BOUND_UNSUPPORTED as u8);
    }
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
