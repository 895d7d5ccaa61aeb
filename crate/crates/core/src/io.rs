//! Headerless raw arrays (little-endian, row-major) and time-step discovery.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;

use crate::error::{Error, Result};
use crate::model::{element_count, Dataset, ElementKind, FieldSeries};

pub const STEP_PLACEHOLDER: &str = "{step}";
pub const FIELD_PLACEHOLDER: &str = "{field}";

pub fn encode_raw(values: &[f64], kind: ElementKind) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * kind.width());
    match kind {
        ElementKind::F32 => values
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        ElementKind::F64 => values
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

/// Decodes whole samples; a trailing partial sample is ignored.
pub fn decode_raw(bytes: &[u8], kind: ElementKind) -> Vec<f64> {
    match kind {
        ElementKind::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        ElementKind::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

/// Reads a raw array. The dataset is named after the file stem, step 0.
pub fn load_raw(path: impl AsRef<Path>, shape: &[usize], kind: ElementKind) -> Result<Dataset> {
    let path = path.as_ref();
    let n = element_count(shape)?;
    let expected = (n * kind.width()) as u64;
    let actual = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    if actual != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let values = decode_raw(&bytes, kind);
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index,
            value: values[index],
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    Dataset::new(name, 0, shape.to_vec(), kind, values)
}

pub fn write_raw(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raw(data.values(), data.kind())).map_err(|e| Error::io(path, e))
}

/// Files of one field, ordered by numeric time step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesFiles {
    pub field_name: String,
    pub steps: Vec<(u64, PathBuf)>,
}

impl SeriesFiles {
    pub fn load(&self, shape: &[usize], kind: ElementKind) -> Result<FieldSeries> {
        let steps = self
            .steps
            .iter()
            .map(|(t, p)| Ok(load_raw(p, shape, kind)?.with_identity(&self.field_name, *t)))
            .collect::<Result<Vec<_>>>()?;
        FieldSeries::new(&self.field_name, steps)
    }
}

/// Expands a file pattern such as `data/CLOUDf{step}.bin` or
/// `data/{field}_{step}.f32`.
///
/// Placeholders may appear only in the file-name part: `{step}` matches a run
/// of digits (read as a number, so `01`, `2`, `10` sort as 1, 2, 10),
/// `{field}` matches any non-empty text and `*` any text. Without `{field}`
/// the field is named after the pattern's file name with `{step}` removed.
pub fn discover_series(pattern: &str) -> Result<Vec<SeriesFiles>> {
    let path = Path::new(pattern);
    let file_pattern = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::InvalidArgument(format!("pattern `{pattern}` has no file name")))?;
    if !file_pattern.contains(STEP_PLACEHOLDER) {
        return Err(Error::InvalidArgument(format!(
            "pattern `{pattern}` must contain {STEP_PLACEHOLDER} in its file name"
        )));
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if dir.to_string_lossy().contains('{') {
        return Err(Error::InvalidArgument(
            "placeholders are only allowed in the file name".into(),
        ));
    }

    let has_field = file_pattern.contains(FIELD_PLACEHOLDER);
    let mut re = String::from("^");
    let mut rest = file_pattern.as_str();
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix(STEP_PLACEHOLDER) {
            re.push_str(r"(?P<step>\d+)");
            rest = r;
        } else if let Some(r) = rest.strip_prefix(FIELD_PLACEHOLDER) {
            re.push_str("(?P<field>.+?)");
            rest = r;
        } else if let Some(r) = rest.strip_prefix('*') {
            re.push_str(".*");
            rest = r;
        } else {
            let c = rest.chars().next().unwrap();
            re.push_str(&regex::escape(&c.to_string()));
            rest = &rest[c.len_utf8()..];
        }
    }
    re.push('$');
    let re = Regex::new(&re).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let default_field = {
        let stripped = file_pattern.replace(STEP_PLACEHOLDER, "");
        match Path::new(&stripped).file_stem() {
            Some(s) if !s.is_empty() => s.to_string_lossy().into_owned(),
            _ => "field".to_string(),
        }
    };

    let mut groups: BTreeMap<String, BTreeMap<u64, PathBuf>> = BTreeMap::new();
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(caps) = re.captures(&name) else {
            continue;
        };
        let step: u64 = caps["step"].parse().map_err(|_| {
            Error::InvalidArgument(format!("step number in `{name}` is out of range"))
        })?;
        let field = if has_field {
            caps["field"].to_string()
        } else {
            default_field.clone()
        };
        let files = groups.entry(field.clone()).or_default();
        if let Some(prev) = files.insert(step, entry.path()) {
            return Err(Error::InvalidArgument(format!(
                "field `{field}` has two files for step {step}: {} and {}",
                prev.display(),
                entry.path().display()
            )));
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyMatch(pattern.to_string()));
    }
    Ok(groups
        .into_iter()
        .map(|(field_name, steps)| SeriesFiles {
            field_name,
            steps: steps.into_iter().collect(),
        })
        .collect())
}
