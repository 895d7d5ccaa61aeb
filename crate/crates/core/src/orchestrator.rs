//! Drives the search: splits the error-bound range into overlapping regions,
//! searches them in parallel, reuses bounds across time steps and fans out
//! over fields.
//!
//! # Determinism
//!
//! Regions run concurrently but the result never depends on scheduling. Each
//! region's search is seeded from `(seed, time step, region index)`, and the
//! winner is the *lowest-indexed* region that finds an acceptable bound. A
//! shared watermark holds the lowest index that has hit so far; a region
//! with a larger index stops before its next compressor call. Regions at or
//! below the winner always run to completion, so their traces and call
//! counts are reproducible, and only those regions are reported. When no
//! region hits, every region runs its full budget and all are reported.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::compressor::CompressorHandle;
use crate::error::{Error, Result};
use crate::model::{Dataset, FieldSeries, Region, RegionTrace, StepRecord, TargetSpec, TuneResult};
use crate::optimizer::{
    clamped_loss, cutoff_threshold, find_min_global_with_cutoff, Evaluation, LossSpec, Probe,
    SearchError, SearchTrace, SplitMix64, Termination,
};

/// Splits `[0, upper]` into `k` regions of width `w = upper / k`, each
/// widened by `alpha * w` on both sides and clipped to `[0, upper]`.
pub fn make_error_bounds(upper: f64, k: usize, alpha: f64) -> Result<Vec<Region>> {
    if !(upper.is_finite() && upper > 0.0) {
        return Err(Error::InvalidArgument(format!("upper bound {upper} must be positive")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("at least one region is required".into()));
    }
    if !(0.0..0.5).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("overlap {alpha} must be in [0, 0.5)")));
    }
    let w = upper / k as f64;
    (0..k)
        .map(|i| {
            let lo = (i as f64 * w - alpha * w).max(0.0);
            let hi = if i + 1 == k {
                upper
            } else {
                ((i + 1) as f64 * w + alpha * w).min(upper)
            };
            Region::new(i, lo, hi)
        })
        .collect()
}

/// The loss seen by the search for one compressor.
///
/// The loss is snapped to the acceptance test so that "loss at or below the
/// cutoff" and "ratio inside the acceptance interval" never disagree through
/// rounding.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    compressor: &'a CompressorHandle,
    data: &'a Dataset,
    spec: &'a TargetSpec,
    loss: LossSpec,
    cutoff: f64,
}

impl<'a> Objective<'a> {
    pub fn new(compressor: &'a CompressorHandle, data: &'a Dataset, spec: &'a TargetSpec) -> Self {
        let loss = LossSpec::new(spec.rho_target()).with_kind(spec.loss());
        Objective {
            compressor,
            data,
            spec,
            loss,
            cutoff: cutoff_threshold(&loss, spec.epsilon()),
        }
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn loss_of(&self, ratio: f64) -> f64 {
        let l = clamped_loss(ratio, &self.loss);
        match (self.spec.accepts(ratio), l <= self.cutoff) {
            (true, false) => self.cutoff,
            (false, true) => self.cutoff.next_up(),
            _ => l,
        }
    }

    /// One compressor call. A bound the codec refuses costs the maximal loss
    /// and has no ratio.
    pub fn probe(&self, bound: f64) -> Result<Probe> {
        match self.compressor.eval_ratio(self.data, bound) {
            Ok(ratio) => Ok(Probe {
                value: self.loss_of(ratio),
                ratio: Some(ratio),
            }),
            Err(Error::BoundUnsupported { .. }) => Ok(Probe {
                value: self.loss.gamma(),
                ratio: None,
            }),
            Err(e) => Err(e),
        }
    }
}

/// What one region's search produced.
#[derive(Debug)]
pub struct WorkerOutcome {
    pub region: Region,
    pub evaluations: Vec<Evaluation>,
    pub best: usize,
    pub terminated_by: Termination,
    /// Index into `evaluations` of the accepted bound.
    pub hit: Option<usize>,
    pub calls: u64,
    pub error: Option<Error>,
}

impl WorkerOutcome {
    /// Best bound found, or the accepted one on a hit.
    pub fn error_bound(&self) -> Option<f64> {
        self.chosen().map(|e| e.x)
    }

    /// Ratio at [`Self::error_bound`]; `None` if the codec refused it.
    pub fn rho_achieved(&self) -> Option<f64> {
        self.chosen().and_then(|e| e.ratio)
    }

    fn chosen(&self) -> Option<&Evaluation> {
        self.evaluations.get(self.hit.unwrap_or(self.best))
    }

    fn is_cancelled(&self) -> bool {
        self.error.as_ref().is_some_and(Error::is_cancelled)
    }

    fn into_trace(self) -> RegionTrace {
        RegionTrace {
            region: self.region,
            hit: self.hit.is_some(),
            trace: SearchTrace {
                evaluations: self.evaluations,
                best: self.best,
                terminated_by: self.terminated_by,
            },
            error: self.error.map(|e| e.to_string()),
        }
    }
}

/// Searches one region. Stops early with [`Error::Cancelled`] once a region
/// with a smaller index than `region.index` has hit.
pub fn worker_task(
    objective: &Objective<'_>,
    region: Region,
    max_iters: usize,
    seed: u64,
    watermark: &AtomicUsize,
) -> WorkerOutcome {
    let mut log: Vec<Evaluation> = Vec::new();
    let mut calls = 0u64;
    let result = find_min_global_with_cutoff(
        |x| {
            if watermark.load(Ordering::Acquire) < region.index {
                return Err(Error::Cancelled);
            }
            calls += 1;
            let p = objective.probe(x)?;
            log.push(Evaluation {
                x,
                ratio: p.ratio,
                loss: p.value,
            });
            Ok(p)
        },
        region.lower,
        region.upper,
        objective.cutoff(),
        max_iters,
        seed,
    );
    match result {
        Ok(out) => {
            let hit = (out.trace.terminated_by == Termination::Cutoff).then_some(out.trace.best);
            if hit.is_some() {
                watermark.fetch_min(region.index, Ordering::AcqRel);
            }
            WorkerOutcome {
                region,
                evaluations: out.trace.evaluations,
                best: out.trace.best,
                terminated_by: out.trace.terminated_by,
                hit,
                calls,
                error: None,
            }
        }
        Err(e) => {
            let error = match e {
                SearchError::InvalidInput(m) => Error::InvalidArgument(m),
                SearchError::Objective { x, source } if !source.is_cancelled() => Error::Region {
                    region: region.index,
                    source: Box::new(Error::Evaluation {
                        bound: x,
                        source: Box::new(source),
                    }),
                },
                SearchError::Objective { source, .. } => source,
            };
            let best = log
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.loss.total_cmp(&b.1.loss).then(a.0.cmp(&b.0)))
                .map_or(0, |(i, _)| i);
            WorkerOutcome {
                region,
                evaluations: log,
                best,
                terminated_by: Termination::Aborted,
                hit: None,
                calls,
                error: Some(error),
            }
        }
    }
}

/// The region layout for a target plus, after a run, where each field had
/// to retrain.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub regions: Vec<Region>,
    pub tasks_per_dataset: usize,
    pub retrain_log: BTreeMap<String, Vec<u64>>,
}

impl Schedule {
    pub fn new(spec: &TargetSpec) -> Result<Self> {
        let regions = make_error_bounds(spec.max_error_bound(), spec.regions(), spec.overlap())?;
        Ok(Schedule {
            tasks_per_dataset: regions.len(),
            regions,
            retrain_log: BTreeMap::new(),
        })
    }

    pub fn record(&mut self, result: &TuneResult) {
        self.retrain_log
            .insert(result.field_name.clone(), result.retrain_steps());
    }
}

/// Result of one training round over all regions.
#[derive(Debug, Clone, PartialEq)]
pub struct Training {
    /// `(bound, ratio)` from the lowest-indexed region that hit.
    pub hit: Option<(f64, f64)>,
    /// Reported regions in index order.
    pub traces: Vec<RegionTrace>,
    pub calls: u64,
}

impl Training {
    /// The evaluation whose ratio is closest to `rho_target`; ties go to the
    /// earliest region, then the earliest evaluation.
    pub fn closest(&self, rho_target: f64) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for e in self.traces.iter().flat_map(|t| &t.trace.evaluations) {
            if let Some(r) = e.ratio {
                if best.is_none_or(|(_, br)| (r - rho_target).abs() < (br - rho_target).abs()) {
                    best = Some((e.x, r));
                }
            }
        }
        best
    }
}

/// Searches every region of `spec` for `data`, in parallel on the current
/// rayon pool.
pub fn train_region_parallel(
    compressor: &CompressorHandle,
    data: &Dataset,
    spec: &TargetSpec,
    round_seed: u64,
) -> Result<Training> {
    let min = compressor.min_bound(data.kind());
    let regions: Vec<Region> = make_error_bounds(spec.max_error_bound(), spec.regions(), spec.overlap())?
        .into_iter()
        .filter_map(|r| {
            let lower = r.lower.max(min);
            (lower < r.upper).then(|| Region::new(r.index, lower, r.upper).ok())?
        })
        .collect();
    if regions.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "search range [0, {}] lies below the codec minimum {min:e}",
            spec.max_error_bound()
        )));
    }

    let objective = Objective::new(compressor, data, spec);
    let watermark = AtomicUsize::new(usize::MAX);
    let slots: Vec<Mutex<Option<WorkerOutcome>>> = regions.iter().map(|_| Mutex::new(None)).collect();
    rayon::scope_fifo(|s| {
        for (slot, &region) in slots.iter().zip(&regions) {
            let (objective, watermark) = (&objective, &watermark);
            s.spawn_fifo(move |_| {
                let seed = SplitMix64::derive(round_seed, region.index as u64);
                let out = if watermark.load(Ordering::Acquire) < region.index {
                    WorkerOutcome {
                        region,
                        evaluations: Vec::new(),
                        best: 0,
                        terminated_by: Termination::Aborted,
                        hit: None,
                        calls: 0,
                        error: Some(Error::Cancelled),
                    }
                } else {
                    worker_task(objective, region, spec.max_iterations_per_region(), seed, watermark)
                };
                *slot.lock().unwrap_or_else(|p| p.into_inner()) = Some(out);
            });
        }
    });
    let outcomes: Vec<WorkerOutcome> = slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|p| p.into_inner()).expect("every region ran"))
        .collect();

    let winner = outcomes.iter().position(|o| o.hit.is_some());
    let reported: Vec<WorkerOutcome> = match winner {
        Some(w) => outcomes.into_iter().take(w + 1).collect(),
        None => outcomes,
    };
    debug_assert!(reported.iter().all(|o| !o.is_cancelled()));
    if reported.iter().all(|o| o.error.is_some()) {
        let first = reported.into_iter().find_map(|o| o.error).expect("non-empty");
        return Err(Error::AllRegionsFailed(Box::new(first)));
    }
    let hit = reported.last().and_then(|o| {
        o.hit.map(|i| {
            let e = &o.evaluations[i];
            (e.x, e.ratio.expect("a hit has a ratio"))
        })
    });
    let calls = reported.iter().map(|o| o.calls).sum();
    Ok(Training {
        hit,
        traces: reported.into_iter().map(WorkerOutcome::into_trace).collect(),
        calls,
    })
}

fn round_seed(spec: &TargetSpec, time_step: u64) -> u64 {
    SplitMix64::derive(spec.seed(), time_step)
}

fn failed_step(time_step: u64, calls: u64, started: Instant, error: &Error) -> StepRecord {
    StepRecord {
        time_step,
        error_bound: f64::NAN,
        rho_achieved: f64::NAN,
        feasible: false,
        retrained: true,
        compressor_calls: calls,
        elapsed: started.elapsed(),
        regions: Vec::new(),
        error: Some(error.to_string()),
    }
}

/// Processes one step, trying `prediction` first. Returns the record and the
/// bound to carry to the next step.
fn process_step(
    compressor: &CompressorHandle,
    data: &Dataset,
    spec: &TargetSpec,
    prediction: Option<f64>,
) -> (StepRecord, Option<f64>) {
    let started = Instant::now();
    let t = data.time_step();
    let mut calls = 0u64;
    let mut observed: Option<(f64, f64)> = None;
    if let Some(bound) = prediction {
        calls += 1;
        match Objective::new(compressor, data, spec).probe(bound) {
            Ok(Probe {
                ratio: Some(ratio), ..
            }) => {
                if spec.accepts(ratio) {
                    let record = StepRecord {
                        time_step: t,
                        error_bound: bound,
                        rho_achieved: ratio,
                        feasible: true,
                        retrained: false,
                        compressor_calls: calls,
                        elapsed: started.elapsed(),
                        regions: Vec::new(),
                        error: None,
                    };
                    return (record, Some(bound));
                }
                observed = Some((bound, ratio));
            }
            // An unusable prediction simply forces retraining.
            Ok(_) | Err(_) => {}
        }
    }

    match train_region_parallel(compressor, data, spec, round_seed(spec, t)) {
        Ok(training) => {
            calls += training.calls;
            let (bound, ratio, feasible) = match training.hit {
                Some((b, r)) => (b, r, true),
                None => {
                    let closest = training.closest(spec.rho_target());
                    let pick = match (observed, closest) {
                        (Some(o), Some(c)) => {
                            let rt = spec.rho_target();
                            if (c.1 - rt).abs() < (o.1 - rt).abs() {
                                c
                            } else {
                                o
                            }
                        }
                        (o, c) => o.or(c).unwrap_or((f64::NAN, f64::NAN)),
                    };
                    (pick.0, pick.1, false)
                }
            };
            let record = StepRecord {
                time_step: t,
                error_bound: bound,
                rho_achieved: ratio,
                feasible,
                retrained: true,
                compressor_calls: calls,
                elapsed: started.elapsed(),
                regions: training.traces,
                error: None,
            };
            (record, feasible.then_some(bound))
        }
        Err(e) => (failed_step(t, calls, started, &e), None),
    }
}

/// Tunes every step of a series. The first step always trains; later steps
/// reuse the previous feasible bound when it still meets the target.
pub fn run_field_series(
    compressor: &CompressorHandle,
    series: &FieldSeries,
    spec: &TargetSpec,
) -> Result<TuneResult> {
    let started = Instant::now();
    let first = series
        .steps()
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("field `{}` has no steps", series.field_name())))?;
    if !compressor.capabilities().supported_dims.contains(&first.dims()) {
        return Err(Error::UnsupportedDimensionality {
            codec: compressor.name().to_string(),
            dims: first.dims(),
        });
    }

    let mut log = Vec::with_capacity(series.len());
    let mut prediction = None;
    for data in series.steps() {
        let (record, next) = process_step(compressor, data, spec, prediction);
        prediction = next;
        log.push(record);
    }
    let last_ok = log.iter().rev().find(|r| r.error.is_none());
    Ok(TuneResult {
        field_name: series.field_name().to_string(),
        error_bound: last_ok.map_or(f64::NAN, |r| r.error_bound),
        rho_achieved: last_ok.map_or(f64::NAN, |r| r.rho_achieved),
        feasible: log.iter().all(|r| r.feasible),
        compressor_calls: log.iter().map(|r| r.compressor_calls).sum(),
        per_step_log: log,
        elapsed: started.elapsed(),
    })
}

/// Tunes a single dataset.
pub fn tune_dataset(
    compressor: &CompressorHandle,
    data: &Dataset,
    spec: &TargetSpec,
) -> Result<TuneResult> {
    let series = FieldSeries::new(data.field_name(), vec![data.clone()])?;
    run_field_series(compressor, &series, spec)
}

/// Builds a pool of `threads` workers (at least one).
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .thread_name(|i| format!("ratiotune-{i}"))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Tunes all fields on a pool of `pool` workers. Fields and regions share the
/// pool; a failing field does not affect the others. Results are in input
/// order.
pub fn run_all_fields(
    compressor: &CompressorHandle,
    fields: &[FieldSeries],
    spec: &TargetSpec,
    pool: usize,
) -> Result<Vec<Result<TuneResult>>> {
    let pool = thread_pool(pool)?;
    Ok(pool.install(|| {
        fields
            .par_iter()
            .map(|f| run_field_series(compressor, f, spec))
            .collect()
    }))
}

/// Ratio at each bound, evaluated in parallel; results keep the input order.
pub fn oracle_sweep(
    compressor: &CompressorHandle,
    data: &Dataset,
    bounds: &[f64],
) -> Vec<Result<f64>> {
    bounds
        .par_iter()
        .map(|&b| compressor.eval_ratio(data, b))
        .collect()
}

/// `n` points spaced evenly in `log10` between `lo` and `hi` inclusive. Both
/// ends are returned exactly.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo, "log grid needs 0 < lo <= hi");
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| match i {
                    0 => lo,
                    _ if i == n - 1 => hi,
                    _ => 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64).clamp(lo, hi),
                })
                .collect()
        }
    }
}

/// `n` evenly spaced points between `lo` and `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Sum of compressor calls over a set of results.
pub fn total_calls(results: &[TuneResult]) -> u64 {
    results.iter().map(|r| r.compressor_calls).sum()
}

/// Total wall time over a set of results.
pub fn total_elapsed(results: &[TuneResult]) -> Duration {
    results.iter().map(|r| r.elapsed).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::Registry;
    use crate::synthetic::smooth_field;
    use std::collections::BTreeMap;

    #[test]
    fn region_partition_reference() {
        let r = make_error_bounds(1.0, 12, 0.1).unwrap();
        assert_eq!(r.len(), 12);
        assert_eq!(r[0].lower, 0.0);
        assert!((r[0].upper - 1.1 / 12.0).abs() < 1e-15);
        assert!((r[5].lower - 4.9 / 12.0).abs() < 1e-15);
        assert!((r[5].upper - 6.1 / 12.0).abs() < 1e-15);
        assert_eq!(r[11].upper, 1.0);
        let single = make_error_bounds(2.0, 1, 0.1).unwrap();
        assert_eq!((single[0].lower, single[0].upper), (0.0, 2.0));
        assert!(make_error_bounds(1.0, 0, 0.1).is_err());
        assert!(make_error_bounds(1.0, 2, 0.5).is_err());
    }

    #[test]
    fn regions_cover_range() {
        for k in 1..20 {
            let r = make_error_bounds(3.0, k, 0.0).unwrap();
            for w in r.windows(2) {
                assert!(w[0].upper >= w[1].lower);
            }
            assert_eq!(r[0].lower, 0.0);
            assert_eq!(r[k - 1].upper, 3.0);
        }
    }

    #[test]
    fn grids() {
        let g = log_grid(1e-4, 1.0, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[4], 1.0);
        assert!((g[2] - 1e-2).abs() < 1e-15);
        assert_eq!(linear_grid(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn loss_snaps_to_acceptance() {
        let h = Registry::builtin().create("identity", &BTreeMap::new()).unwrap();
        let d = smooth_field(&[16], 0);
        let spec = TargetSpec::new(10.0, 0.1, 1.0).unwrap();
        let o = Objective::new(&h, &d, &spec);
        assert_eq!(o.loss_of(10.0), 0.0);
        assert!(o.loss_of(9.0) <= o.cutoff());
        assert!(o.loss_of(8.999) > o.cutoff());
        assert!(o.loss_of(11.0) <= o.cutoff());
    }

    #[test]
    fn tunes_pq_on_smooth_field() {
        let h = Registry::builtin().create("pq", &BTreeMap::new()).unwrap();
        let d = smooth_field(&[32, 32], 3);
        let spec = TargetSpec::new(8.0, 0.1, 0.5).unwrap();
        let r = tune_dataset(&h, &d, &spec).unwrap();
        assert!(r.feasible, "{r:?}");
        assert!(spec.accepts(r.rho_achieved));
        assert!((h.eval_ratio(&d, r.error_bound).unwrap() - r.rho_achieved).abs() == 0.0);
        assert_eq!(r.retrain_steps(), vec![0]);
    }

    #[test]
    fn identity_is_infeasible_with_closest_ratio() {
        let h = Registry::builtin().create("identity", &BTreeMap::new()).unwrap();
        let d = smooth_field(&[64], 1);
        let spec = TargetSpec::new(4.0, 0.1, 1.0)
            .unwrap()
            .with_regions(2)
            .unwrap()
            .with_max_iterations(5)
            .unwrap();
        let r = tune_dataset(&h, &d, &spec).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.rho_achieved, 1.0);
        assert_eq!(r.compressor_calls, 10);
        assert_eq!(r.per_step_log[0].regions.len(), 2);
    }

    #[test]
    fn unsupported_dims_is_field_error() {
        let h = Registry::builtin().create("pq", &BTreeMap::new()).unwrap();
        let d = Dataset::from_values(vec![2, 2, 2, 2], crate::model::ElementKind::F32, vec![0.0; 16])
            .unwrap();
        let spec = TargetSpec::new(4.0, 0.1, 1.0).unwrap();
        assert!(matches!(
            tune_dataset(&h, &d, &spec),
            Err(Error::UnsupportedDimensionality { dims: 4, .. })
        ));
    }
}
