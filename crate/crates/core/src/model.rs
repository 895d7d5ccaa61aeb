//! Shared data model: datasets, tuning targets, error-control constraints and
//! tuning results. Everything here is immutable after construction.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{LossKind, SearchTrace};

/// Floating-point width of the stored samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    F32,
    F64,
}

impl ElementKind {
    pub fn width(self) -> usize {
        match self {
            ElementKind::F32 => 4,
            ElementKind::F64 => 8,
        }
    }

    /// Smallest positive normal value of this kind.
    pub fn min_positive_normal(self) -> f64 {
        match self {
            ElementKind::F32 => f32::MIN_POSITIVE as f64,
            ElementKind::F64 => f64::MIN_POSITIVE,
        }
    }

    /// Rounds `v` to the nearest value representable in this kind.
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            ElementKind::F32 => v as f32 as f64,
            ElementKind::F64 => v,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ElementKind::F32 => 0,
            ElementKind::F64 => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ElementKind::F32),
            1 => Some(ElementKind::F64),
            _ => None,
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElementKind::F32 => "f32",
            ElementKind::F64 => "f64",
        })
    }
}

impl FromStr for ElementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" | "float32" | "float" => Ok(ElementKind::F32),
            "f64" | "float64" | "double" => Ok(ElementKind::F64),
            other => Err(Error::InvalidArgument(format!("unknown dtype `{other}`"))),
        }
    }
}

/// One field at one time step: an N-dimensional row-major array.
///
/// Samples are held as `f64`; for [`ElementKind::F32`] every sample is
/// rounded to single precision on construction so that the stored values are
/// exactly what a float32 file would contain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    field_name: String,
    time_step: u64,
    shape: Vec<usize>,
    kind: ElementKind,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(
        field_name: impl Into<String>,
        time_step: u64,
        shape: Vec<usize>,
        kind: ElementKind,
        mut values: Vec<f64>,
    ) -> Result<Self> {
        let n = element_count(&shape)?;
        if values.len() != n {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} holds {n} samples but {} were given",
                values.len()
            )));
        }
        for (index, v) in values.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index, value: *v });
            }
            *v = kind.round(*v);
            if !v.is_finite() {
                // finite f64 that overflows f32
                return Err(Error::NonFinite { index, value: *v });
            }
        }
        Ok(Dataset {
            field_name: field_name.into(),
            time_step,
            shape,
            kind,
            values,
        })
    }

    /// Unnamed dataset at step 0, mostly for tests and one-off calls.
    pub fn from_values(shape: Vec<usize>, kind: ElementKind, values: Vec<f64>) -> Result<Self> {
        Dataset::new("data", 0, shape, kind, values)
    }

    pub fn field_name(&self) -> &str {
        &self.field_name
    }

    pub fn time_step(&self) -> u64 {
        self.time_step
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Size of the raw array in bytes, `n * width`.
    pub fn byte_size(&self) -> usize {
        self.values.len() * self.kind.width()
    }

    /// Same shape and kind, different samples.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Dataset::new(
            self.field_name.clone(),
            self.time_step,
            self.shape.clone(),
            self.kind,
            values,
        )
    }

    pub fn with_identity(mut self, field_name: impl Into<String>, time_step: u64) -> Self {
        self.field_name = field_name.into();
        self.time_step = time_step;
        self
    }

    pub(crate) fn check_same_layout(&self, other: &Dataset) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Contract(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

pub(crate) fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidArgument("shape must have at least one extent".into()));
    }
    let mut n: usize = 1;
    for &e in shape {
        if e == 0 {
            return Err(Error::InvalidArgument(format!("zero extent in shape {shape:?}")));
        }
        n = n
            .checked_mul(e)
            .ok_or_else(|| Error::InvalidArgument(format!("shape {shape:?} overflows")))?;
    }
    Ok(n)
}

/// All time steps of one field.
#[derive(Debug, Clone)]
pub struct FieldSeries {
    field_name: String,
    steps: Vec<Dataset>,
}

impl FieldSeries {
    pub fn new(field_name: impl Into<String>, steps: Vec<Dataset>) -> Result<Self> {
        let field_name = field_name.into();
        if steps.is_empty() {
            return Err(Error::InvalidArgument(format!("series `{field_name}` is empty")));
        }
        let first = &steps[0];
        for pair in steps.windows(2) {
            if pair[1].time_step <= pair[0].time_step {
                return Err(Error::InvalidArgument(format!(
                    "time steps of `{field_name}` must strictly increase ({} then {})",
                    pair[0].time_step, pair[1].time_step
                )));
            }
        }
        for d in &steps {
            if d.field_name != field_name || d.shape != first.shape || d.kind != first.kind {
                return Err(Error::InvalidArgument(format!(
                    "step {} does not match field `{field_name}` layout",
                    d.time_step
                )));
            }
        }
        Ok(FieldSeries { field_name, steps })
    }

    pub fn field_name(&self) -> &str {
        &self.field_name
    }

    pub fn steps(&self) -> &[Dataset] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// What the user asked for: a target ratio, a relative tolerance around it,
/// the largest error bound the search may use, and the search budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    rho_target: f64,
    epsilon: f64,
    max_error_bound: f64,
    max_iterations_per_region: usize,
    regions: usize,
    overlap: f64,
    seed: u64,
    loss: LossKind,
}

impl TargetSpec {
    pub const DEFAULT_REGIONS: usize = 12;
    pub const DEFAULT_OVERLAP: f64 = 0.1;
    pub const DEFAULT_MAX_ITERATIONS: usize = 100;

    /// Spec with default regions (12), overlap (0.1), budget (100 per region)
    /// and seed 0.
    pub fn new(rho_target: f64, epsilon: f64, max_error_bound: f64) -> Result<Self> {
        TargetSpec {
            rho_target,
            epsilon,
            max_error_bound,
            max_iterations_per_region: Self::DEFAULT_MAX_ITERATIONS,
            regions: Self::DEFAULT_REGIONS,
            overlap: Self::DEFAULT_OVERLAP,
            seed: 0,
            loss: LossKind::Squared,
        }
        .validated()
    }

    pub fn with_max_iterations(mut self, n: usize) -> Result<Self> {
        self.max_iterations_per_region = n;
        self.validated()
    }

    pub fn with_regions(mut self, k: usize) -> Result<Self> {
        self.regions = k;
        self.validated()
    }

    pub fn with_overlap(mut self, alpha: f64) -> Result<Self> {
        self.overlap = alpha;
        self.validated()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_max_error_bound(mut self, u: f64) -> Result<Self> {
        self.max_error_bound = u;
        self.validated()
    }

    pub fn with_target(mut self, rho: f64) -> Result<Self> {
        self.rho_target = rho;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.rho_target.is_finite() && self.rho_target >= 1.0) {
            return bad(format!("target ratio must be >= 1, got {}", self.rho_target));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.max_error_bound.is_finite() && self.max_error_bound > 0.0) {
            return bad(format!(
                "max error bound must be positive, got {}",
                self.max_error_bound
            ));
        }
        if self.max_iterations_per_region < 2 {
            return bad("at least 2 iterations per region are required".into());
        }
        if self.regions == 0 {
            return bad("at least one region is required".into());
        }
        if !(self.overlap >= 0.0 && self.overlap < 0.5) {
            return bad(format!("overlap must lie in [0, 0.5), got {}", self.overlap));
        }
        Ok(self)
    }

    pub fn rho_target(&self) -> f64 {
        self.rho_target
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn max_error_bound(&self) -> f64 {
        self.max_error_bound
    }

    pub fn max_iterations_per_region(&self) -> usize {
        self.max_iterations_per_region
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    /// True when `rho` lies inside the acceptance interval (bounds inclusive).
    pub fn accepts(&self, rho: f64) -> bool {
        let (lo, hi) = acceptance_interval(self);
        lo <= rho && rho <= hi
    }
}

/// `((1 - eps) * rho_t, (1 + eps) * rho_t)`.
pub fn acceptance_interval(spec: &TargetSpec) -> (f64, f64) {
    (
        (1.0 - spec.epsilon) * spec.rho_target,
        (1.0 + spec.epsilon) * spec.rho_target,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    AbsoluteMaxError,
    MeanSquaredError,
}

impl ErrorKind {
    /// Flag spelling used by the external-compressor protocol.
    pub fn flag(self) -> &'static str {
        match self {
            ErrorKind::AbsoluteMaxError => "abs",
            ErrorKind::MeanSquaredError => "mse",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for ErrorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "abs" | "absolute" | "absolute_max_error" => Ok(ErrorKind::AbsoluteMaxError),
            "mse" | "mean_squared_error" => Ok(ErrorKind::MeanSquaredError),
            other => Err(Error::InvalidArgument(format!("unknown error mode `{other}`"))),
        }
    }
}

/// An error ceiling on reconstructions.
///
/// The mean-squared-error variant is normalized by the sample count, so the
/// ceiling does not depend on the array size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorControl {
    kind: ErrorKind,
    ceiling: f64,
}

impl ErrorControl {
    pub fn new(kind: ErrorKind, ceiling: f64) -> Result<Self> {
        if !(ceiling.is_finite() && ceiling > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "error ceiling must be positive, got {ceiling}"
            )));
        }
        Ok(ErrorControl { kind, ceiling })
    }

    pub fn absolute(ceiling: f64) -> Result<Self> {
        Self::new(ErrorKind::AbsoluteMaxError, ceiling)
    }

    pub fn mse(ceiling: f64) -> Result<Self> {
        Self::new(ErrorKind::MeanSquaredError, ceiling)
    }

    pub fn kind(&self) -> ErrorKind {
        self.kind
    }

    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }
}

/// True iff the distortion between `original` and `decoded` is within the
/// control's ceiling (inclusive).
pub fn error_within(control: &ErrorControl, original: &Dataset, decoded: &Dataset) -> Result<bool> {
    original.check_same_layout(decoded)?;
    let diffs = original
        .values()
        .iter()
        .zip(decoded.values())
        .map(|(a, b)| a - b);
    let distortion = match control.kind {
        ErrorKind::AbsoluteMaxError => diffs.fold(0.0_f64, |m, d| m.max(d.abs())),
        ErrorKind::MeanSquaredError => {
            diffs.map(|d| d * d).sum::<f64>() / original.len() as f64
        }
    };
    Ok(distortion <= control.ceiling)
}

/// One sub-interval of the error-bound search range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Region {
    pub fn new(index: usize, lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "region {index} has empty range [{lower}, {upper}]"
            )));
        }
        Ok(Region {
            index,
            lower,
            upper,
        })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Search telemetry for one region of one training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTrace {
    pub region: Region,
    pub hit: bool,
    /// Evaluations made in this region. For a failed region only the
    /// evaluations that completed are listed.
    pub trace: SearchTrace,
    pub error: Option<String>,
}

/// Outcome for one (field, time step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time_step: u64,
    pub error_bound: f64,
    pub rho_achieved: f64,
    pub feasible: bool,
    pub retrained: bool,
    pub compressor_calls: u64,
    pub elapsed: Duration,
    /// Empty when the carried prediction was accepted.
    pub regions: Vec<RegionTrace>,
    /// Set when this step failed; the numeric fields are then meaningless.
    pub error: Option<String>,
}

/// Result of tuning one dataset or one field series.
///
/// For a series, `error_bound` and `rho_achieved` describe the last
/// successfully processed step and `feasible` holds only when every step was
/// feasible. When infeasible, `rho_achieved` is the observed ratio closest to
/// the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub field_name: String,
    pub error_bound: f64,
    pub rho_achieved: f64,
    pub feasible: bool,
    pub compressor_calls: u64,
    pub per_step_log: Vec<StepRecord>,
    pub elapsed: Duration,
}

impl TuneResult {
    pub fn retrain_steps(&self) -> Vec<u64> {
        self.per_step_log
            .iter()
            .filter(|s| s.retrained)
            .map(|s| s.time_step)
            .collect()
    }
}
