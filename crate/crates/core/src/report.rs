//! Per-(field, step) result tables in CSV or JSON.
//!
//! Floats are written in their shortest round-trip form, so parsing a report
//! reproduces every number bit for bit. Non-finite values are written as
//! `inf`, `-inf` and `NaN` in both formats.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compressor::CompressorHandle;
use crate::error::{Error, Result};
use crate::metrics::quality_report;
use crate::model::{FieldSeries, RegionTrace, TargetSpec, TuneResult};

/// Serde adapter for `f64` and `Option<f64>` that survives non-finite
/// values in JSON.
pub mod float_text {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub(crate) fn write<S: Serializer>(v: f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct FloatVisitor;

    impl Visitor<'_> for FloatVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of `inf`, `-inf`, `NaN`")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            v.trim().parse().map_err(|_| E::custom(format!("invalid number `{v}`")))
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        write(*v, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(FloatVisitor)
    }

    /// The same for `Option<f64>`; `None` is `null` in JSON and an empty
    /// cell in CSV.
    pub mod option {
        use super::*;

        struct OptVisitor;

        impl<'de> Visitor<'de> for OptVisitor {
            type Value = Option<f64>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an optional number")
            }

            fn visit_none<E: de::Error>(self) -> Result<Self::Value, E> {
                Ok(None)
            }

            fn visit_unit<E: de::Error>(self) -> Result<Self::Value, E> {
                Ok(None)
            }

            fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
                d.deserialize_any(FloatVisitor).map(Some)
            }
        }

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => write(*v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            d.deserialize_option(OptVisitor)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl Format {
    /// `csv` for a `.csv` extension, JSON otherwise.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Json,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidArgument(format!("unknown report format `{other}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Json => "json",
            Format::Csv => "csv",
        })
    }
}

/// One line of the report. `time_step` is empty for a field that failed as
/// a whole; `error` is set for failed fields and steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub field: String,
    pub time_step: Option<u64>,
    pub codec: String,
    #[serde(with = "float_text")]
    pub rho_target: f64,
    #[serde(with = "float_text")]
    pub epsilon: f64,
    #[serde(with = "float_text")]
    pub error_bound: f64,
    #[serde(with = "float_text")]
    pub rho_achieved: f64,
    pub feasible: bool,
    pub retrained: bool,
    pub compressor_calls: u64,
    #[serde(with = "float_text::option")]
    pub psnr: Option<f64>,
    #[serde(with = "float_text::option")]
    pub ssim: Option<f64>,
    #[serde(with = "float_text::option")]
    pub max_abs_error: Option<f64>,
    #[serde(with = "float_text::option")]
    pub acf_error: Option<f64>,
    #[serde(with = "float_text")]
    pub elapsed_seconds: f64,
    pub error: Option<String>,
}

/// Search telemetry for one retraining step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub field: String,
    pub time_step: u64,
    pub regions: Vec<RegionTrace>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<Vec<StepTrace>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    /// Record wall-clock times; when off every elapsed time is written as 0
    /// so that repeated runs produce identical files.
    pub timings: bool,
    /// Embed per-region search traces (JSON only).
    pub trace: bool,
    /// Decompress at the chosen bound and compute quality metrics.
    pub metrics: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            timings: true,
            trace: false,
            metrics: true,
        }
    }
}

fn field_error_row(field: &str, codec: &str, spec: &TargetSpec, error: &Error) -> ReportRow {
    ReportRow {
        field: field.to_string(),
        time_step: None,
        codec: codec.to_string(),
        rho_target: spec.rho_target(),
        epsilon: spec.epsilon(),
        error_bound: f64::NAN,
        rho_achieved: f64::NAN,
        feasible: false,
        retrained: false,
        compressor_calls: 0,
        psnr: None,
        ssim: None,
        max_abs_error: None,
        acf_error: None,
        elapsed_seconds: 0.0,
        error: Some(error.to_string()),
    }
}

/// Turns tuning results into a report. `results[i]` belongs to `fields[i]`.
pub fn build_report(
    compressor: &CompressorHandle,
    fields: &[FieldSeries],
    results: &[Result<TuneResult>],
    spec: &TargetSpec,
    options: ReportOptions,
) -> Result<Report> {
    if fields.len() != results.len() {
        return Err(Error::Contract(format!(
            "{} fields but {} results",
            fields.len(),
            results.len()
        )));
    }
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (series, result) in fields.iter().zip(results) {
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                rows.push(field_error_row(series.field_name(), compressor.name(), spec, e));
                continue;
            }
        };
        for (step, data) in result.per_step_log.iter().zip(series.steps()) {
            let mut row = ReportRow {
                field: result.field_name.clone(),
                time_step: Some(step.time_step),
                codec: compressor.name().to_string(),
                rho_target: spec.rho_target(),
                epsilon: spec.epsilon(),
                error_bound: step.error_bound,
                rho_achieved: step.rho_achieved,
                feasible: step.feasible,
                retrained: step.retrained,
                compressor_calls: step.compressor_calls,
                psnr: None,
                ssim: None,
                max_abs_error: None,
                acf_error: None,
                elapsed_seconds: if options.timings {
                    step.elapsed.as_secs_f64()
                } else {
                    0.0
                },
                error: step.error.clone(),
            };
            if options.metrics && step.error.is_none() && step.error_bound.is_finite() {
                let decoded = compressor.decompress(&compressor.compress(data, step.error_bound)?)?;
                let q = quality_report(data, &decoded, None)?;
                row.psnr = q.psnr;
                row.ssim = q.ssim;
                row.max_abs_error = Some(q.max_abs_error);
                row.acf_error = q.acf_error_lag1;
            }
            rows.push(row);
            if options.trace && !step.regions.is_empty() {
                traces.push(StepTrace {
                    field: result.field_name.clone(),
                    time_step: step.time_step,
                    regions: step.regions.clone(),
                });
            }
        }
    }
    Ok(Report {
        rows,
        traces: options.trace.then_some(traces),
    })
}

pub fn write_csv(rows: &[ReportRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    // written explicitly so that an empty report still has a header
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

pub const CSV_HEADER: [&str; 16] = [
    "field",
    "time_step",
    "codec",
    "rho_target",
    "epsilon",
    "error_bound",
    "rho_achieved",
    "feasible",
    "retrained",
    "compressor_calls",
    "psnr",
    "ssim",
    "max_abs_error",
    "acf_error",
    "elapsed_seconds",
    "error",
];

pub fn read_csv(input: impl Read) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected report header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn to_json(report: &Report) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn from_json(text: &str) -> Result<Report> {
    Ok(serde_json::from_str(text)?)
}

pub fn render(report: &Report, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => to_json(report).map(|mut s| {
            s.push('\n');
            s.into_bytes()
        }),
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(&report.rows, &mut buf)?;
            Ok(buf)
        }
    }
}

pub fn write_report(path: &Path, report: &Report, format: Format) -> Result<()> {
    fs::write(path, render(report, format)?).map_err(|e| Error::io(path, e))
}

/// Reads a report written by [`write_report`]; CSV reports have no traces.
pub fn read_report(path: &Path, format: Format) -> Result<Report> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Json => from_json(&String::from_utf8_lossy(&bytes)),
        Format::Csv => Ok(Report {
            rows: read_csv(bytes.as_slice())?,
            traces: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: u64) -> ReportRow {
        ReportRow {
            field: format!("f{i}"),
            time_step: Some(i),
            codec: "pq".into(),
            rho_target: 10.0,
            epsilon: 0.1,
            error_bound: 0.1 + 0.2 * i as f64,
            rho_achieved: 1.0 / 3.0,
            feasible: i % 2 == 0,
            retrained: true,
            compressor_calls: 17,
            psnr: Some(if i == 0 { f64::INFINITY } else { 45.123456789012345 }),
            ssim: if i == 1 { None } else { Some(0.999_999_999_999_9) },
            max_abs_error: Some(f64::MIN_POSITIVE),
            acf_error: Some(1e-300),
            elapsed_seconds: 0.0,
            error: None,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![row(0), row(1), row(2)];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut failed = row(3);
        failed.time_step = None;
        failed.error_bound = f64::NAN;
        failed.error = Some("boom".into());
        let report = Report {
            rows: vec![row(0), row(1)],
            traces: Some(Vec::new()),
        };
        assert_eq!(from_json(&to_json(&report).unwrap()).unwrap(), report);
        let back = from_json(&to_json(&Report { rows: vec![failed.clone()], traces: None }).unwrap())
            .unwrap();
        assert!(back.rows[0].error_bound.is_nan());
        assert_eq!(back.rows[0].error, failed.error);
    }

    #[test]
    fn empty_csv_has_header_only() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("field,time_step,"));
        assert!(read_csv(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn format_from_path() {
        assert_eq!(Format::from_path(Path::new("a/b.CSV")), Format::Csv);
        assert_eq!(Format::from_path(Path::new("a/b.json")), Format::Json);
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
    }
}
