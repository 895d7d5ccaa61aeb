//! Run configuration and the end-to-end tuning pipeline behind the CLI.
//!
//! A configuration file holds `key = value` lines; `#` starts a comment.
//! Keys are the long command-line flag names (`target`, `max-bound`, ...)
//! and codec parameters are written `param.NAME = value`. Command-line flags
//! override the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::compressor::{CompressorHandle, Registry};
use crate::error::{Error, Result};
use crate::io::{discover_series, load_raw, STEP_PLACEHOLDER};
use crate::model::{ElementKind, FieldSeries, TargetSpec, TuneResult};
use crate::optimizer::LossKind;
use crate::orchestrator::run_all_fields;
use crate::report::{build_report, Format, Report, ReportOptions};

pub const PARAM_PREFIX: &str = "param.";

const KEYS: &[&str] = &[
    "input",
    "shape",
    "dtype",
    "codec",
    "target",
    "epsilon",
    "max-bound",
    "regions",
    "overlap",
    "max-iters",
    "seed",
    "pool",
    "loss",
    "report",
    "format",
    "trace",
    "timings",
];

/// Parses `key = value` lines.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if !key.starts_with(PARAM_PREFIX) && !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key `{}`", n + 1, k.trim())));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Everything needed for one tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// A raw file, or a pattern containing `{step}` (and optionally
    /// `{field}`).
    pub input: String,
    pub shape: Vec<usize>,
    pub dtype: ElementKind,
    pub codec: String,
    pub codec_params: BTreeMap<String, String>,
    pub target: f64,
    pub epsilon: f64,
    /// Upper end of the search range; defaults to the largest value range
    /// among the first steps of all fields.
    pub max_bound: Option<f64>,
    pub regions: usize,
    pub overlap: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub pool: usize,
    pub loss: LossKind,
    pub report: Option<PathBuf>,
    pub format: Option<Format>,
    pub trace: bool,
    pub timings: bool,
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
        })
        .transpose()
}

fn required<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    get(map, key)?.ok_or_else(|| Error::Config(format!("`{key}` is required")))
}

pub fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split([',', 'x'])
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&d| d > 0)
                .ok_or_else(|| Error::Config(format!("invalid extent `{p}` in shape `{s}`")))
        })
        .collect()
}

fn parse_bool(map: &BTreeMap<String, String>, key: &str, default: bool) -> Result<bool> {
    match map.get(key).map(|s| s.to_ascii_lowercase()) {
        None => Ok(default),
        Some(v) => match v.as_str() {
            "1" | "true" | "yes" | "on" => Ok(true),
            "0" | "false" | "no" | "off" => Ok(false),
            _ => Err(Error::Config(format!("invalid boolean `{v}` for `{key}`"))),
        },
    }
}

impl RunConfig {
    /// Builds a configuration from merged key/value settings.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let loss = match map.get("loss").map(|s| s.to_ascii_lowercase()) {
            None => LossKind::Squared,
            Some(s) if s == "squared" => LossKind::Squared,
            Some(s) if s == "absolute" => LossKind::Absolute,
            Some(s) => return Err(Error::Config(format!("unknown loss `{s}`"))),
        };
        let cfg = RunConfig {
            input: required(map, "input")?,
            shape: parse_shape(&required::<String>(map, "shape")?)?,
            dtype: get(map, "dtype")?.unwrap_or(ElementKind::F32),
            codec: get(map, "codec")?.unwrap_or_else(|| "pq".to_string()),
            codec_params: map
                .iter()
                .filter_map(|(k, v)| Some((k.strip_prefix(PARAM_PREFIX)?.to_string(), v.clone())))
                .collect(),
            target: required(map, "target")?,
            epsilon: get(map, "epsilon")?.unwrap_or(0.1),
            max_bound: get(map, "max-bound")?,
            regions: get(map, "regions")?.unwrap_or(TargetSpec::DEFAULT_REGIONS),
            overlap: get(map, "overlap")?.unwrap_or(TargetSpec::DEFAULT_OVERLAP),
            max_iters: get(map, "max-iters")?.unwrap_or(TargetSpec::DEFAULT_MAX_ITERATIONS),
            seed: get(map, "seed")?.unwrap_or(0),
            pool: get(map, "pool")?.unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            }),
            loss,
            report: get::<String>(map, "report")?.map(PathBuf::from),
            format: get(map, "format")?,
            trace: parse_bool(map, "trace", false)?,
            timings: parse_bool(map, "timings", true)?,
        };
        if cfg.pool == 0 {
            return Err(Error::Config("`pool` must be at least 1".into()));
        }
        // validate the numeric settings early, before any data is read
        cfg.spec_with_bound(cfg.max_bound.unwrap_or(1.0))?;
        Ok(cfg)
    }

    /// `file` settings overridden by `cli` settings.
    pub fn merged(
        file: &BTreeMap<String, String>,
        cli: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut map = file.clone();
        map.extend(cli.iter().map(|(k, v)| (k.clone(), v.clone())));
        Self::from_map(&map)
    }

    pub fn report_format(&self) -> Format {
        self.format.unwrap_or_else(|| {
            self.report
                .as_deref()
                .map_or(Format::Json, Format::from_path)
        })
    }

    fn spec_with_bound(&self, upper: f64) -> Result<TargetSpec> {
        Ok(TargetSpec::new(self.target, self.epsilon, upper)?
            .with_regions(self.regions)?
            .with_overlap(self.overlap)?
            .with_max_iterations(self.max_iters)?
            .with_seed(self.seed)
            .with_loss(self.loss))
    }

    /// The target, using the data to pick the search range when
    /// `max_bound` is unset.
    pub fn target_spec(&self, fields: &[FieldSeries]) -> Result<TargetSpec> {
        let upper = match self.max_bound {
            Some(u) => u,
            None => {
                let range = fields
                    .iter()
                    .filter_map(|f| f.steps().first())
                    .map(|d| {
                        let v = d.values();
                        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                        hi - lo
                    })
                    .fold(0.0, f64::max);
                if range > 0.0 { range } else { 1.0 }
            }
        };
        self.spec_with_bound(upper)
    }

    pub fn compressor(&self) -> Result<CompressorHandle> {
        Registry::builtin().create(&self.codec, &self.codec_params)
    }

    /// Loads every field named by `input`.
    pub fn load_fields(&self) -> Result<Vec<FieldSeries>> {
        if self.input.contains(STEP_PLACEHOLDER) {
            discover_series(&self.input)?
                .iter()
                .map(|s| s.load(&self.shape, self.dtype))
                .collect()
        } else {
            let d = load_raw(&self.input, &self.shape, self.dtype)?;
            let name = d.field_name().to_string();
            Ok(vec![FieldSeries::new(name, vec![d])?])
        }
    }
}

/// Outcome of [`run`].
#[derive(Debug)]
pub struct RunOutput {
    pub fields: Vec<FieldSeries>,
    pub results: Vec<Result<TuneResult>>,
    pub spec: TargetSpec,
    pub report: Report,
}

impl RunOutput {
    /// 0 when every field met the target, 3 when some step was infeasible,
    /// 1 when some field failed outright.
    pub fn exit_code(&self) -> i32 {
        if self.results.iter().any(|r| r.is_err()) {
            1
        } else if self.results.iter().flatten().all(|r| r.feasible) {
            0
        } else {
            3
        }
    }
}

/// Loads the data, tunes every field and builds the report.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let compressor = cfg.compressor()?;
    let fields = cfg.load_fields()?;
    let spec = cfg.target_spec(&fields)?;
    let results = run_all_fields(&compressor, &fields, &spec, cfg.pool)?;
    let report = build_report(
        &compressor,
        &fields,
        &results,
        &spec,
        ReportOptions {
            timings: cfg.timings,
            trace: cfg.trace,
            metrics: true,
        },
    )?;
    Ok(RunOutput {
        fields,
        results,
        spec,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> BTreeMap<String, String> {
        parse_config_text("input = a.f32\nshape = 4,4\ntarget = 10 # ratio\n").unwrap()
    }

    #[test]
    fn parses_file_and_defaults() {
        let cfg = RunConfig::from_map(&base()).unwrap();
        assert_eq!(cfg.shape, vec![4, 4]);
        assert_eq!(cfg.codec, "pq");
        assert_eq!(cfg.epsilon, 0.1);
        assert_eq!(cfg.regions, 12);
        assert_eq!(cfg.max_iters, 100);
        assert!(cfg.timings && !cfg.trace);
    }

    #[test]
    fn cli_overrides_file() {
        let mut file = base();
        file.insert("epsilon".into(), "0.2".into());
        file.insert("param.dictionary".into(), "false".into());
        let mut cli = BTreeMap::new();
        cli.insert("epsilon".to_string(), "0.05".to_string());
        let cfg = RunConfig::merged(&file, &cli).unwrap();
        assert_eq!(cfg.epsilon, 0.05);
        assert_eq!(cfg.codec_params.get("dictionary").unwrap(), "false");
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(parse_config_text("nonsense").is_err());
        assert!(parse_config_text("colour = red").is_err());
        let mut m = base();
        m.insert("epsilon".into(), "1.5".into());
        assert!(RunConfig::from_map(&m).is_err());
        let mut m = base();
        m.remove("target");
        assert!(matches!(RunConfig::from_map(&m), Err(Error::Config(_))));
        assert!(parse_shape("4,0").is_err());
        assert_eq!(parse_shape("64x64x64").unwrap(), vec![64, 64, 64]);
    }

    #[test]
    fn format_follows_report_extension() {
        let mut m = base();
        m.insert("report".into(), "out.csv".into());
        assert_eq!(RunConfig::from_map(&m).unwrap().report_format(), Format::Csv);
        m.insert("format".into(), "json".into());
        assert_eq!(RunConfig::from_map(&m).unwrap().report_format(), Format::Json);
    }
}
