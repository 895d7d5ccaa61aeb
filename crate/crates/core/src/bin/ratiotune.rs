//! Command-line front end.
//!
//! Exit status: 0 when every field met its target, 3 when some step was
//! infeasible, 1 on errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ratiotune::compressor::{container, CompressedBuffer, Registry};
use ratiotune::config::{parse_shape, read_config_file, run, RunConfig, PARAM_PREFIX};
use ratiotune::io::{load_raw, write_raw};
use ratiotune::metrics::quality_report;
use ratiotune::orchestrator::{linear_grid, log_grid, oracle_sweep};
use ratiotune::report::{render, write_report};
use ratiotune::{ElementKind, Error, Result};

#[derive(Parser)]
#[command(name = "ratiotune", version, about = "Tune lossy compressors to a target compression ratio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the error bound that meets a target ratio for every field/step.
    Tune(TuneArgs),
    /// Print the ratio at a grid of error bounds.
    Sweep(SweepArgs),
    /// Compare an original and a decoded raw file.
    Metrics(MetricsArgs),
    /// Compress a raw file into a container at a fixed bound.
    Compress(CompressArgs),
    /// Decode a container back to a raw file.
    Decompress(DecompressArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Raw little-endian input file
    #[arg(long)]
    input: PathBuf,
    /// Extents, slowest first, e.g. 64,64,64
    #[arg(long)]
    shape: String,
    #[arg(long, default_value = "f32")]
    dtype: ElementKind,
}

#[derive(Args)]
struct CodecArgs {
    #[arg(long, default_value = "pq")]
    codec: String,
    /// Codec parameter KEY=VALUE (repeatable), e.g. dictionary=false
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

impl CodecArgs {
    fn params(&self) -> Result<BTreeMap<String, String>> {
        self.params
            .iter()
            .map(|p| {
                p.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| Error::InvalidArgument(format!("expected KEY=VALUE, got `{p}`")))
            })
            .collect()
    }
}

#[derive(Args)]
struct TuneArgs {
    /// Settings file of `key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Raw file, or a pattern with {step} (and optionally {field})
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    dtype: Option<String>,
    #[arg(long)]
    codec: Option<String>,
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Target compression ratio
    #[arg(long)]
    target: Option<f64>,
    /// Relative tolerance around the target
    #[arg(long)]
    epsilon: Option<f64>,
    /// Upper end of the error-bound search range
    #[arg(long)]
    max_bound: Option<f64>,
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    overlap: Option<f64>,
    /// Evaluation budget per region
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long)]
    pool: Option<usize>,
    /// squared or absolute
    #[arg(long)]
    loss: Option<String>,
    /// Report path; printed to stdout when omitted
    #[arg(long)]
    report: Option<PathBuf>,
    /// json or csv (default: from the report extension)
    #[arg(long)]
    format: Option<String>,
    /// Embed search traces in JSON reports
    #[arg(long)]
    trace: bool,
    /// Write all elapsed times as 0 for reproducible reports
    #[arg(long)]
    no_timings: bool,
}

impl TuneArgs {
    fn settings(&self) -> Result<BTreeMap<String, String>> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("input", self.input.clone());
        put("shape", self.shape.clone());
        put("dtype", self.dtype.clone());
        put("codec", self.codec.clone());
        put("target", self.target.map(|v| v.to_string()));
        put("epsilon", self.epsilon.map(|v| v.to_string()));
        put("max-bound", self.max_bound.map(|v| v.to_string()));
        put("regions", self.regions.map(|v| v.to_string()));
        put("overlap", self.overlap.map(|v| v.to_string()));
        put("max-iters", self.max_iters.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("pool", self.pool.map(|v| v.to_string()));
        put("loss", self.loss.clone());
        put("report", self.report.as_ref().map(|p| p.display().to_string()));
        put("format", self.format.clone());
        put("trace", self.trace.then(|| "true".to_string()));
        put("timings", self.no_timings.then(|| "false".to_string()));
        let codec = CodecArgs {
            codec: String::new(),
            params: self.params.clone(),
        };
        for (k, v) in codec.params()? {
            m.insert(format!("{PARAM_PREFIX}{k}"), v);
        }
        Ok(m)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long)]
    lo: f64,
    #[arg(long)]
    hi: f64,
    #[arg(long, default_value_t = 50)]
    points: usize,
    /// Space the bounds logarithmically
    #[arg(long)]
    log: bool,
    #[arg(long)]
    pool: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    decoded: PathBuf,
    #[arg(long)]
    shape: String,
    #[arg(long, default_value = "f32")]
    dtype: ElementKind,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long)]
    bound: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    /// Container written by `compress`
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Codec parameters, needed for external codecs
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

fn tune(args: &TuneArgs) -> Result<i32> {
    let file = match &args.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let cfg = RunConfig::merged(&file, &args.settings()?)?;
    let out = run(&cfg)?;
    let format = cfg.report_format();
    match &cfg.report {
        Some(path) => write_report(path, &out.report, format)?,
        None => print!("{}", String::from_utf8_lossy(&render(&out.report, format)?)),
    }
    for r in &out.results {
        if let Err(e) = r {
            eprintln!("error: {e}");
        }
    }
    Ok(out.exit_code())
}

fn sweep(args: &SweepArgs) -> Result<i32> {
    let data = load_raw(&args.data.input, &parse_shape(&args.data.shape)?, args.data.dtype)?;
    let handle = Registry::builtin().create(&args.codec.codec, &args.codec.params()?)?;
    let bounds = if args.log {
        if !(args.lo > 0.0 && args.hi >= args.lo) {
            return Err(Error::InvalidArgument("log sweep needs 0 < lo <= hi".into()));
        }
        log_grid(args.lo, args.hi, args.points)
    } else {
        linear_grid(args.lo, args.hi, args.points)
    };
    let pool = ratiotune::orchestrator::thread_pool(
        args.pool
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
    )?;
    let ratios = pool.install(|| oracle_sweep(&handle, &data, &bounds));
    println!("error_bound,ratio");
    for (b, r) in bounds.iter().zip(ratios) {
        match r {
            Ok(r) => println!("{b},{r}"),
            Err(e) => println!("{b},NaN # {e}"),
        }
    }
    Ok(0)
}

fn metrics(args: &MetricsArgs) -> Result<i32> {
    let shape = parse_shape(&args.shape)?;
    let a = load_raw(&args.original, &shape, args.dtype)?;
    let b = load_raw(&args.decoded, &shape, args.dtype)?;
    println!("{}", serde_json::to_string_pretty(&quality_report(&a, &b, None)?)?);
    Ok(0)
}

fn compress(args: &CompressArgs) -> Result<i32> {
    let data = load_raw(&args.data.input, &parse_shape(&args.data.shape)?, args.data.dtype)?;
    let handle = Registry::builtin().create(&args.codec.codec, &args.codec.params()?)?;
    let buf = handle.compress(&data, args.bound)?;
    fs::write(&args.output, buf.to_container()).map_err(|e| Error::Io {
        path: args.output.clone(),
        source: e,
    })?;
    eprintln!(
        "{} -> {} payload bytes, ratio {}",
        data.byte_size(),
        buf.len(),
        data.byte_size() as f64 / buf.len() as f64
    );
    Ok(0)
}

fn decompress(args: &DecompressArgs) -> Result<i32> {
    let bytes = fs::read(&args.input).map_err(|e| Error::Io {
        path: args.input.clone(),
        source: e,
    })?;
    let buf = CompressedBuffer::from_container(&bytes)?;
    let params = CodecArgs {
        codec: String::new(),
        params: args.params.clone(),
    }
    .params()?;
    let handle = Registry::builtin().create(container::codec_name_for(buf.codec_id), &params)?;
    write_raw(&args.output, &handle.decompress(&buf)?)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Tune(a) => tune(a),
        Command::Sweep(a) => sweep(a),
        Command::Metrics(a) => metrics(a),
        Command::Compress(a) => compress(a),
        Command::Decompress(a) => decompress(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
